"""Ideal triangulations of punctured surfaces, flips, the epsilon form and the
Kashaev lattice.

Edges are numbered 0..E-1 and carry an orientation.  A side of a face is a
signed label: ``e`` for the edge traversed along its orientation and ``~e``
(stored as ``-e - 1``) for the reverse.  Faces list their three sides in
counterclockwise order, so every label occurs in exactly one face and the
gluing is ``e <-> ~e``.  This is the same labeling scheme as the ``flipper``
package, and the flip below reproduces its conventions, so flip words exported
from it can be used unchanged.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

from .numeric import int_identity, int_matmul, integer_kernel, solve_integer


class UnflippableEdge(ValueError):
    pass


class RelabelingMismatch(ValueError):
    pass


class InvalidTriangulation(ValueError):
    pass


def inv(label: int) -> int:
    return ~label


def norm(label: int) -> int:
    return label if label >= 0 else ~label


def label_str(label: int) -> str:
    return str(label) if label >= 0 else f"~{~label}"


def parse_label(x) -> int:
    if isinstance(x, int):
        return x
    x = str(x).strip()
    if x.startswith("~"):
        return ~int(x[1:])
    return int(x)


def tail(label: int) -> int:
    """Endpoint id of the start of a side; edge e has endpoints 2e (tail) and 2e+1 (head)."""
    e = norm(label)
    return 2 * e if label >= 0 else 2 * e + 1


def head(label: int) -> int:
    e = norm(label)
    return 2 * e + 1 if label >= 0 else 2 * e


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


@dataclass(frozen=True)
class IdealTriangulation:
    faces: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        faces = tuple(tuple(int(s) for s in f) for f in self.faces)
        object.__setattr__(self, "faces", faces)
        labels = [s for f in faces for s in f]
        n_edges = len(labels) // 2
        if sorted(labels) != sorted(list(range(n_edges)) + [~e for e in range(n_edges)]):
            raise InvalidTriangulation("every edge must appear once with each orientation")
        chi = len(faces) - n_edges
        if chi >= 0:
            raise InvalidTriangulation(f"Euler characteristic must be negative, got {chi}")
        if n_edges != -3 * chi or len(faces) != -2 * chi:
            raise InvalidTriangulation("edge/face counts inconsistent with Euler characteristic")

    # -- basic structure ---------------------------------------------------

    @property
    def num_edges(self) -> int:
        return len(self.faces) * 3 // 2

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def side_position(self) -> dict[int, tuple[int, int]]:
        """label -> (face index, position within the face)."""
        return {s: (f, i) for f, face in enumerate(self.faces) for i, s in enumerate(face)}

    def face_of(self, label: int) -> int:
        return self.side_position[label][0]

    def rotated_face(self, label: int) -> tuple[int, int, int]:
        f, i = self.side_position[label]
        face = self.faces[f]
        return face[i], face[(i + 1) % 3], face[(i + 2) % 3]

    @cached_property
    def _vertex_classes(self) -> list[int]:
        uf = _UnionFind(2 * self.num_edges)
        for face in self.faces:
            for i in range(3):
                uf.union(head(face[i]), tail(face[(i + 1) % 3]))
        roots = sorted({uf.find(x) for x in range(2 * self.num_edges)})
        index = {r: k for k, r in enumerate(roots)}
        return [index[uf.find(x)] for x in range(2 * self.num_edges)]

    @property
    def num_punctures(self) -> int:
        return max(self._vertex_classes) + 1

    @property
    def euler_characteristic(self) -> int:
        return self.num_faces - self.num_edges

    @property
    def genus(self) -> int:
        return (2 - self.euler_characteristic - self.num_punctures) // 2

    def endpoint_puncture(self, endpoint: int) -> int:
        return self._vertex_classes[endpoint]

    def tail_puncture(self, label: int) -> int:
        return self._vertex_classes[tail(label)]

    def head_puncture(self, label: int) -> int:
        return self._vertex_classes[head(label)]

    def corner_puncture(self, face: int, corner: int) -> int:
        """Puncture at the corner where side ``corner`` of the face starts."""
        return self.tail_puncture(self.faces[face][corner])

    def puncture_vectors(self) -> list[list[int]]:
        """c_v: how many ends of each edge lie on puncture v."""
        out = [[0] * self.num_edges for _ in range(self.num_punctures)]
        for e in range(self.num_edges):
            out[self._vertex_classes[2 * e]][e] += 1
            out[self._vertex_classes[2 * e + 1]][e] += 1
        return out

    def self_folded_faces(self) -> list[int]:
        return [f for f, face in enumerate(self.faces) if len({norm(s) for s in face}) < 3]

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        punct = [[self.corner_puncture(f, i) for i in range(3)] for f in range(self.num_faces)]
        return {
            "faces": [[label_str(s) for s in face] for face in self.faces],
            "gluing": [[label_str(e), label_str(~e)] for e in range(self.num_edges)],
            "edge_labels": list(range(self.num_edges)),
            "puncture_at_corner": punct,
            "genus": self.genus,
            "punctures": self.num_punctures,
        }

    @classmethod
    def from_json(cls, data: dict) -> "IdealTriangulation":
        faces = tuple(tuple(parse_label(s) for s in face) for face in data["faces"])
        tri = cls(faces)
        for pair in data.get("gluing", []):
            a, b = (parse_label(s) for s in pair)
            if a != ~b:
                raise InvalidTriangulation(f"gluing pair {pair} is not a side and its reverse")
        if "genus" in data and data["genus"] != tri.genus:
            raise InvalidTriangulation("declared genus does not match the face data")
        if "punctures" in data and data["punctures"] != tri.num_punctures:
            raise InvalidTriangulation("declared puncture count does not match the face data")
        return tri

    def canonical(self) -> tuple:
        """Faces rotated to start at their smallest label, sorted."""
        out = []
        for face in self.faces:
            i = face.index(min(face))
            out.append(face[i:] + face[:i])
        return tuple(sorted(out))

    def __str__(self) -> str:
        return "[" + ", ".join("(" + ", ".join(label_str(s) for s in f) + ")" for f in self.faces) + "]"


def epsilon_form(tri: IdealTriangulation) -> list[list[int]]:
    """Skew form on edges: corners where a is followed by b counterclockwise,
    minus corners where b is followed by a."""
    E = tri.num_edges
    eps = [[0] * E for _ in range(E)]
    for face in tri.faces:
        for i in range(3):
            a, b = norm(face[i]), norm(face[(i + 1) % 3])
            eps[a][b] += 1
            eps[b][a] -= 1
    return eps


def cf_generator_change(tri: IdealTriangulation) -> list[list[int]]:
    """Columns give the generators used for the cluster structure: for a
    self-folded face with sides i, i, b the generator X_i is replaced by X_i X_b."""
    E = tri.num_edges
    g = int_identity(E)
    for f in tri.self_folded_faces():
        face = tri.faces[f]
        counts = {}
        for s in face:
            counts[norm(s)] = counts.get(norm(s), 0) + 1
        folded = next(e for e, c in counts.items() if c == 2)
        other = next(e for e, c in counts.items() if c == 1)
        g[other][folded] += 1
    return g


# ---------------------------------------------------------------------------
# flips


@dataclass(frozen=True)
class FlipFrame:
    """Local labels of a flip: faces (e1, a, b) and (e2, c, d) become
    (e1', d, a) and (e2', b, c)."""

    label: int
    a: int
    b: int
    c: int
    d: int
    face_a: int
    face_b: int

    @property
    def edge(self) -> int:
        return norm(self.label)

    @property
    def e1(self) -> int:
        return self.label

    @property
    def e2(self) -> int:
        return ~self.label

    @property
    def e1_new(self) -> int:
        return self.edge

    @property
    def e2_new(self) -> int:
        return ~self.edge


def flip(tri: IdealTriangulation, label: int) -> tuple[IdealTriangulation, FlipFrame]:
    label = parse_label(label)
    fa = tri.face_of(label)
    fb = tri.face_of(~label)
    if fa == fb:
        raise UnflippableEdge(f"edge {label_str(label)} bounds the same face on both sides")
    _, a, b = tri.rotated_face(label)
    _, c, d = tri.rotated_face(~label)
    idx = norm(label)
    faces = list(tri.faces)
    faces[fa] = (idx, d, a)
    faces[fb] = (~idx, b, c)
    return IdealTriangulation(tuple(faces)), FlipFrame(label, a, b, c, d, fa, fb)


def flip_sequence(tri: IdealTriangulation, labels: Iterable) -> tuple[list[IdealTriangulation], list[FlipFrame]]:
    tris = [tri]
    frames = []
    for lab in labels:
        new, frame = flip(tris[-1], lab)
        tris.append(new)
        frames.append(frame)
    return tris, frames


def puncture_transport(before: IdealTriangulation, after: IdealTriangulation, frame: FlipFrame) -> list[int]:
    """Puncture ids of ``after`` expressed as puncture ids of ``before``."""
    out = [-1] * after.num_punctures
    for e in range(after.num_edges):
        if e == frame.edge:
            continue
        for end in (2 * e, 2 * e + 1):
            out[after.endpoint_puncture(end)] = before.endpoint_puncture(end)
    if min(out) < 0:
        raise InvalidTriangulation("puncture lost during flip")
    return out


# ---------------------------------------------------------------------------
# isometries


def find_isometries(src: IdealTriangulation, dst: IdealTriangulation) -> list[dict[int, int]]:
    """All orientation-preserving label maps src -> dst carrying faces to faces."""
    if src.num_edges != dst.num_edges:
        return []
    out = []
    seeds = src.faces[0]
    for target in dst.faces:
        for r in range(3):
            mapping: dict[int, int] = {}
            queue = [(seeds[i], target[(i + r) % 3]) for i in range(3)]
            ok = True
            while queue and ok:
                s, t = queue.pop()
                for x, y in ((s, t), (~s, ~t)):
                    if x in mapping:
                        if mapping[x] != y:
                            ok = False
                            break
                        continue
                    mapping[x] = y
                    fx = src.rotated_face(x)
                    fy = dst.rotated_face(y)
                    queue.extend(zip(fx[1:], fy[1:]))
            if ok and len(mapping) == 2 * src.num_edges:
                out.append(mapping)
    uniq = []
    for m in out:
        if m not in uniq:
            uniq.append(m)
    return sorted(uniq, key=lambda m: [m[e] for e in range(src.num_edges)])


def is_isometry(src: IdealTriangulation, dst: IdealTriangulation, mapping: dict[int, int]) -> bool:
    if any(mapping.get(~s) != ~mapping.get(s, 0) for s in mapping):
        return False
    target = set()
    for face in dst.faces:
        for i in range(3):
            target.add((face[i], face[(i + 1) % 3], face[(i + 2) % 3]))
    try:
        return all(tuple(mapping[s] for s in face) in target for face in src.faces)
    except KeyError:
        return False


def relabeling_from_list(images: Sequence) -> dict[int, int]:
    """``images[e]`` is the signed label of the target for edge e."""
    mapping = {}
    for e, img in enumerate(images):
        y = parse_label(img)
        mapping[e] = y
        mapping[~e] = ~y
    return mapping


def relabeling_to_list(mapping: dict[int, int], num_edges: int) -> list[str]:
    return [label_str(mapping[e]) for e in range(num_edges)]


# ---------------------------------------------------------------------------
# mapping classes


@dataclass(frozen=True)
class MappingClassWord:
    flips: tuple[int, ...]
    relabeling: tuple[int, ...]  # image in lambda_0 of each edge of lambda_N (signed)
    homology_action: tuple[tuple[int, ...], ...] | None = None

    def relabeling_map(self) -> dict[int, int]:
        return relabeling_from_list(self.relabeling)

    def to_json(self) -> dict:
        out = {
            "flips": [label_str(x) for x in self.flips],
            "relabeling": [label_str(x) for x in self.relabeling],
        }
        if self.homology_action is not None:
            out["homology_action"] = [list(r) for r in self.homology_action]
        return out

    @classmethod
    def from_json(cls, data: dict) -> "MappingClassWord":
        flips = tuple(parse_label(x) for x in data["flips"])
        rel = []
        for item in data["relabeling"]:
            if isinstance(item, dict):
                y = int(item["to"])
                rel.append(~y if item.get("reversed") else y)
            else:
                rel.append(parse_label(item))
        h = data.get("homology_action")
        return cls(flips, tuple(rel), tuple(tuple(int(x) for x in r) for r in h) if h else None)


@dataclass(frozen=True)
class MappingClassCertificate:
    triangulations: tuple[IdealTriangulation, ...]
    frames: tuple[FlipFrame, ...]
    isometry: dict  # lambda_N label -> lambda_0 label
    puncture_permutation: tuple[int, ...]  # v -> phi(v) on lambda_0 punctures
    transport: tuple[int, ...]  # lambda_N puncture -> lambda_0 puncture through the flips

    @property
    def start(self) -> IdealTriangulation:
        return self.triangulations[0]

    @property
    def end(self) -> IdealTriangulation:
        return self.triangulations[-1]

    @property
    def num_flips(self) -> int:
        return len(self.frames)

    def phi_side(self, label: int) -> int:
        """Side of lambda_N that phi sends the lambda_0 side ``label`` to."""
        return self._inverse[label]

    @cached_property
    def _inverse(self) -> dict[int, int]:
        return {v: k for k, v in self.isometry.items()}


def apply_mapping_class(tri: IdealTriangulation, word: MappingClassWord) -> MappingClassCertificate:
    tris, frames = flip_sequence(tri, word.flips)
    iso = word.relabeling_map()
    end = tris[-1]
    if len(word.relabeling) != tri.num_edges or not is_isometry(end, tri, iso):
        raise RelabelingMismatch("relabeling does not carry the final triangulation onto the initial one")
    transport = list(range(end.num_punctures))
    for before, after, frame in zip(tris[-2::-1], tris[:0:-1], frames[::-1]):
        step = puncture_transport(before, after, frame)
        transport = [step[v] for v in transport]
    perm = [-1] * tri.num_punctures
    inverse = {v: k for k, v in iso.items()}
    for e in range(tri.num_edges):
        for lab in (e, ~e):
            v = tri.tail_puncture(lab)
            perm[v] = transport[end.tail_puncture(inverse[lab])]
    return MappingClassCertificate(tuple(tris), tuple(frames), iso, tuple(perm), tuple(transport))


def puncture_permutation_by_corners(cert: MappingClassCertificate) -> tuple[int, ...]:
    """Independent puncture permutation: tracks every corner through the flips."""
    tri = cert.start
    # corner (face, i) of lambda_N -> puncture of lambda_0, by walking back face slots
    current = {lab: tri.tail_puncture(lab) for f in tri.faces for lab in f}
    for before, after, frame in zip(cert.triangulations, cert.triangulations[1:], cert.frames):
        nxt = {}
        for face in after.faces:
            for lab in face:
                if norm(lab) != frame.edge:
                    nxt[lab] = current[lab]
        # the new diagonal starts where d ends... use the face data directly
        nxt[frame.e1_new] = current[frame.b]  # (idx, d, a): idx starts at head of a = tail of b
        nxt[frame.e2_new] = current[frame.d]  # (~idx, b, c): ~idx starts at head of c = tail of d
        current = nxt
    inverse = cert._inverse
    perm = [-1] * tri.num_punctures
    for lab in current:
        v0 = tri.tail_puncture(lab)
        perm[v0] = current[inverse[lab]]
    return tuple(perm)


# ---------------------------------------------------------------------------
# lattices


@dataclass(frozen=True)
class KashaevLattice:
    tri: IdealTriangulation
    gram: tuple[tuple[int, ...], ...]
    cfr: tuple[tuple[int, ...], ...]  # rank x E, column e is chi_e + chi_{~e}
    puncture_vectors: tuple[tuple[int, ...], ...]  # c_v in Z^E
    puncture_images: tuple[tuple[int, ...], ...]  # i_CFr(c_v) in L
    puncture_duals: tuple[tuple[int, ...], ...]  # b_v, v < p-1

    @property
    def rank(self) -> int:
        return len(self.gram)

    def side_vector(self, label: int) -> list[int]:
        return side_vector(self.tri, label)

    def omega(self, x: Sequence[int], y: Sequence[int]) -> int:
        return bilinear(self.gram, x, y)


def side_vector(tri: IdealTriangulation, label: int) -> list[int]:
    f, i = tri.side_position[label]
    v = [0] * (2 * tri.num_faces)
    if i == 0:
        v[2 * f] = 1
    elif i == 1:
        v[2 * f + 1] = 1
    else:
        v[2 * f] = -1
        v[2 * f + 1] = -1
    return v


def bilinear(gram, x, y) -> int:
    return sum(x[i] * gram[i][j] * y[j] for i in range(len(x)) if x[i] for j in range(len(y)) if y[j])


def kashaev_gram(tri: IdealTriangulation) -> list[list[int]]:
    r = 2 * tri.num_faces
    g = [[0] * r for _ in range(r)]
    for f in range(tri.num_faces):
        g[2 * f][2 * f + 1] = 1
        g[2 * f + 1][2 * f] = -1
    return g


def cfr_matrix(tri: IdealTriangulation) -> list[list[int]]:
    r = 2 * tri.num_faces
    cols = []
    for e in range(tri.num_edges):
        a, b = side_vector(tri, e), side_vector(tri, ~e)
        cols.append([x + y for x, y in zip(a, b)])
    return [[cols[e][i] for e in range(tri.num_edges)] for i in range(r)]


def mat_vec(m, v) -> list[int]:
    return [sum(row[j] * v[j] for j in range(len(v)) if v[j]) for row in m]


def kashaev_lattice(tri: IdealTriangulation) -> KashaevLattice:
    gram = kashaev_gram(tri)
    cfr = cfr_matrix(tri)
    cvs = tri.puncture_vectors()
    images = [mat_vec(cfr, c) for c in cvs]
    p = tri.num_punctures
    duals = []
    if p > 1:
        # rows: omega(b, i(c_w)) for w < p - 1
        rows = [[sum(gram[i][j] * images[w][j] for j in range(len(gram))) for i in range(len(gram))]
                for w in range(p - 1)]
        for v in range(p - 1):
            rhs = [int(v == w) for w in range(p - 1)]
            b = solve_integer(rows, rhs)
            if b is None:
                raise InvalidTriangulation("puncture classes do not span a direct summand")
            duals.append(b)
        # make the duals mutually isotropic: b_v -= sum_w omega(b_v, b_w) c_w for w > v
        for v in range(p - 1):
            for w in range(v + 1, p - 1):
                x = bilinear(gram, duals[v], duals[w])
                if x:
                    duals[w] = [bw + x * cv for bw, cv in zip(duals[w], images[v])]
    return KashaevLattice(
        tri,
        tuple(map(tuple, gram)),
        tuple(map(tuple, cfr)),
        tuple(map(tuple, cvs)),
        tuple(map(tuple, images)),
        tuple(map(tuple, duals)),
    )


def orthogonal_complement(gram, vectors) -> list[list[int]]:
    """Saturated basis (rows) of {x : omega(x, v) = 0 for all v}."""
    if not vectors:
        return int_identity(len(gram))
    rows = [[sum(gram[i][j] * v[j] for j in range(len(gram))) for i in range(len(gram))] for v in vectors]
    return integer_kernel(rows)


def flip_lattice_map(before: IdealTriangulation, after: IdealTriangulation, frame: FlipFrame) -> list[list[int]]:
    """m: L_after -> L_before as an integer matrix (columns = images of basis)."""
    chi = lambda lab: side_vector(before, lab)
    add = lambda *vs: [sum(xs) for xs in zip(*vs)]
    chi_e = add(chi(frame.e1), chi(frame.e2))
    special = {
        frame.a: chi(frame.a),
        frame.b: add(chi(frame.b), chi_e),
        frame.c: chi(frame.c),
        frame.d: add(chi(frame.d), chi_e),
        frame.e1_new: add(chi(frame.b), chi(frame.c)),
        frame.e2_new: add(chi(frame.a), chi(frame.d)),
    }
    cols = []
    for face in after.faces:
        for lab in face[:2]:
            cols.append(special[lab] if lab in special else chi(lab))
    r = len(cols)
    return [[cols[j][i] for j in range(r)] for i in range(r)]


def cf_flip_lattice_map(before: IdealTriangulation, frame: FlipFrame) -> list[list[int]]:
    """Pullback of the flip map to edge lattices: Z^E(after) -> Z^E(before)."""
    eps = epsilon_form(before)
    E = before.num_edges
    e = frame.edge
    m = int_identity(E)
    for i in range(E):
        if i == e:
            m[e][e] = -1
        else:
            m[e][i] = max(eps[i][e], 0)
    return m


def isometry_lattice_map(start: IdealTriangulation, end: IdealTriangulation, isometry: dict[int, int]) -> list[list[int]]:
    """phi_*: L_start -> L_end sending chi_s to chi of the end side mapped onto s."""
    inverse = {v: k for k, v in isometry.items()}
    cols = []
    for face in start.faces:
        for lab in face[:2]:
            cols.append(side_vector(end, inverse[lab]))
    r = len(cols)
    return [[cols[j][i] for j in range(r)] for i in range(r)]


def isometry_edge_map(isometry: dict[int, int], num_edges: int) -> list[list[int]]:
    """phi_* on Z^E: edge e of the start goes to the end edge mapped onto it."""
    inverse = {v: k for k, v in isometry.items()}
    m = [[0] * num_edges for _ in range(num_edges)]
    for e in range(num_edges):
        m[norm(inverse[e])][e] = 1
    return m


# ---------------------------------------------------------------------------
# homology


def transvection(form, c, sign: int = 1) -> list[list[int]]:
    """x -> x + sign * <c, x> c as a matrix."""
    k = len(c)
    out = int_identity(k)
    pair = [sum(c[i] * form[i][j] for i in range(k)) for j in range(k)]  # <c, e_j>
    for j in range(k):
        for i in range(k):
            out[i][j] += sign * pair[j] * c[i]
    return out


def twist_word_homology_action(word: Sequence[tuple[Sequence[int], int]], form) -> list[list[int]]:
    """Product of Dehn twist actions; the word is read as a composition, so the
    rightmost twist acts first."""
    k = len(form)
    out = int_identity(k)
    for c, sign in word:
        out = int_matmul(out, transvection(form, list(c), sign))
    return out


def preserves_form(m, form) -> bool:
    mt = [list(r) for r in zip(*m)]
    return int_matmul(int_matmul(mt, form), m) == [list(r) for r in form]


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
