"""Layered triangulations of mapping tori, gluing equations and the
hyperbolic data pulled back to the fiber.

Tetrahedron T_i sits between lambda_i and lambda_{i+1}.  With the flip frame
(e, a, b), (~e, c, d) its edges carry the shapes

    02 = e (bottom diagonal), 13 = new diagonal      -> z'
    01 = b, 23 = d                                   -> z
    03 = a, 12 = c                                   -> z''

Shear-bend coordinates of an edge in a layer are minus the product of the
shapes of the tetrahedra above it, up to and including the one in which it
is flipped.
"""
from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

import flint

from .numeric import (
    acb,
    arb,
    get_precision,
    int_rank,
    mag,
    parse_complex,
    smith_form,
    solve_integer,
    to_acb,
    tolerance,
    working_precision,
)
from .surface import (
    KashaevLattice,
    MappingClassCertificate,
    epsilon_form,
    isometry_lattice_map,
    kashaev_lattice,
    norm,
    orthogonal_complement,
)


class NonConvergence(RuntimeError):
    pass


class RankDeficient(ValueError):
    pass


class DegenerateShear(ValueError):
    pass


class NoInvariantDecoration(RuntimeError):
    pass




def _pi_i() -> acb:
    return acb(0, arb.pi())


def _two_pi_i() -> acb:
    return acb(0, 2 * arb.pi())


# ---------------------------------------------------------------------------
# layered triangulation

Z, ZP, ZPP = 0, 1, 2
_POSITIONS = {"01": Z, "23": Z, "02": ZP, "13": ZP, "03": ZPP, "12": ZPP}


@dataclass(frozen=True)
class LayeredTetrahedron:
    index: int
    edge: int
    a: int
    b: int
    c: int
    d: int

    def side_edges(self) -> list[tuple[str, int]]:
        """(position, edge index) for the four side edges."""
        return [("03", norm(self.a)), ("01", norm(self.b)), ("12", norm(self.c)), ("23", norm(self.d))]


@dataclass
class LayeredTriangulation:
    cert: MappingClassCertificate
    tetrahedra: list[LayeredTetrahedron]
    edge_class: dict[tuple[int, int], int]
    classes: list[list[tuple[int, str]]]  # per class: (tet index, position)
    cusp_orbits: list[list[int]]

    @property
    def num_tetrahedra(self) -> int:
        return len(self.tetrahedra)

    @property
    def num_edges(self) -> int:
        return self.cert.start.num_edges

    def monodromy_edge(self, x: int) -> int:
        """Edge of lambda_0 identified with edge x of lambda_N."""
        return norm(self.cert.isometry[x])

    def above(self, layer: int, x: int) -> list[tuple[int, int]]:
        """(tet index, shape kind) of the tetrahedra above edge x of a layer."""
        out = []
        n = self.num_tetrahedra
        steps = 0
        while True:
            if layer == n:
                layer, x = 0, self.monodromy_edge(x)
            tet = self.tetrahedra[layer]
            if x == tet.edge:
                out.append((layer, ZP))
                return out
            for pos, y in tet.side_edges():
                if y == x:
                    out.append((layer, _POSITIONS[pos]))
            layer += 1
            steps += 1
            if steps > 4 * n + 4:
                raise ValueError(f"edge {x} is never flipped")


def build_layered(cert: MappingClassCertificate) -> LayeredTriangulation:
    n = cert.num_flips
    if n == 0:
        raise ValueError("the identity word has no layered triangulation")
    tets = [LayeredTetrahedron(i, f.edge, f.a, f.b, f.c, f.d) for i, f in enumerate(cert.frames)]
    E = cert.start.num_edges
    parent = {(l, x): (l, x) for l in range(n + 1) for x in range(E)}

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    def union(u, v):
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv

    for l, t in enumerate(tets):
        for x in range(E):
            if x != t.edge:
                union((l, x), (l + 1, x))
    for x in range(E):
        union((n, x), (0, norm(cert.isometry[x])))
    roots = {}
    edge_class = {}
    for key in sorted(parent):
        r = find(key)
        edge_class[key] = roots.setdefault(r, len(roots))
    classes: list[list[tuple[int, str]]] = [[] for _ in roots]
    for t in tets:
        classes[edge_class[(t.index, t.edge)]].append((t.index, "02"))
        classes[edge_class[(t.index + 1, t.edge)]].append((t.index, "13"))
        for pos, y in t.side_edges():
            classes[edge_class[(t.index, y)]].append((t.index, pos))
    perm = cert.puncture_permutation
    seen = set()
    orbits = []
    for v in range(len(perm)):
        if v in seen:
            continue
        orb = [v]
        seen.add(v)
        w = perm[v]
        while w != v:
            orb.append(w)
            seen.add(w)
            w = perm[w]
        orbits.append(orb)
    return LayeredTriangulation(cert, tets, edge_class, classes, orbits)


# ---------------------------------------------------------------------------
# gluing equations


@dataclass
class GluingSystem:
    """Rows A z + B z'' = pi i nu in log form, i.e. z^A z''^B = (-1)^nu."""

    A: list[list[int]]
    B: list[list[int]]
    nu: list[int]
    kinds: list[str]
    extra_A: list[list[int]] = field(default_factory=list)
    extra_B: list[list[int]] = field(default_factory=list)
    extra_nu: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.A[0]) if self.A else 0

    def matrix(self) -> list[list[int]]:
        return [a + b for a, b in zip(self.A, self.B)]

    def all_rows(self):
        return (self.A + self.extra_A, self.B + self.extra_B, self.nu + self.extra_nu)


def _fold(counts: Sequence[Sequence[int]], constant: int) -> tuple[list[int], list[int], int]:
    """Fold z' = pi i - log z - log z'': returns (A, B, nu) for
    sum(alpha log z + beta log z' + gamma log z'') = constant * pi i."""
    A = [c[Z] - c[ZP] for c in counts]
    B = [c[ZPP] - c[ZP] for c in counts]
    nu = constant - sum(c[ZP] for c in counts)
    return A, B, nu


def edge_gluing_equations(lt: LayeredTriangulation) -> GluingSystem:
    n = lt.num_tetrahedra
    A, B, nu = [], [], []
    for cls in lt.classes:
        counts = [[0, 0, 0] for _ in range(n)]
        for tet, pos in cls:
            counts[tet][_POSITIONS[pos]] += 1
        a, b, v = _fold(counts, 2)
        A.append(a)
        B.append(b)
        nu.append(v)
    return GluingSystem(A, B, nu, ["edge"] * len(A))


def cusp_equations(lt: LayeredTriangulation) -> GluingSystem:
    """sum_e c_v(e) log t_e = 0 on layer 0, one puncture per phi-orbit."""
    n = lt.num_tetrahedra
    cvs = lt.cert.start.puncture_vectors()
    A, B, nu = [], [], []
    for orb in lt.cusp_orbits:
        cv = cvs[orb[0]]
        counts = [[0, 0, 0] for _ in range(n)]
        const = 0
        for e, mult in enumerate(cv):
            if not mult:
                continue
            const += mult
            for tet, kind in lt.above(0, e):
                counts[tet][kind] += mult
        a, b, v = _fold(counts, 0)
        # sum c (log shapes - pi i) = 0  ->  shapes part = const * pi i
        v += const
        A.append(a)
        B.append(b)
        nu.append(v)
    return GluingSystem(A, B, nu, ["cusp"] * len(A))


def gluing_system(lt: LayeredTriangulation, ingested: "GluingSystem | None" = None) -> GluingSystem:
    """Independent edge rows plus cusp rows; square and of full rank."""
    edges = edge_gluing_equations(lt)
    cusps = ingested if ingested is not None else cusp_equations(lt)
    n = lt.num_tetrahedra
    rows_A, rows_B, rows_nu, kinds = list(cusps.A), list(cusps.B), list(cusps.nu), list(cusps.kinds)
    extra_A, extra_B, extra_nu = [], [], []
    rank = int_rank([a + b for a, b in zip(rows_A, rows_B)]) if rows_A else 0
    for a, b, v in zip(edges.A, edges.B, edges.nu):
        if len(rows_A) < n:
            trial = [x + y for x, y in zip(rows_A + [a], rows_B + [b])]
            r = int_rank(trial)
            if r > rank:
                rows_A.append(a)
                rows_B.append(b)
                rows_nu.append(v)
                kinds.append("edge")
                rank = r
                continue
        extra_A.append(a)
        extra_B.append(b)
        extra_nu.append(v)
    order = sorted(range(len(kinds)), key=lambda i: kinds[i] != "edge")
    sysm = GluingSystem([rows_A[i] for i in order], [rows_B[i] for i in order], [rows_nu[i] for i in order],
                        [kinds[i] for i in order], extra_A, extra_B, extra_nu)
    if len(sysm.A) != n or rank != n:
        raise RankDeficient(f"gluing system has rank {rank} < {n}")
    return sysm


def ingest_gluing(data: dict) -> tuple[GluingSystem, list[acb] | None]:
    """Read a gluing-equation export.  Rows are either in z/z'' form
    (``A``, ``B``, ``nu``) or the rectangular form prod z^a (1-z)^b = c."""
    rows_A, rows_B, nus, kinds = [], [], [], []
    for row in data["equations"]:
        if "rect" in row:
            a, b, c = row["rect"]
            A = [x + y for x, y in zip(a, b)]
            B = list(b)
            nu = (0 if c == 1 else 1) + sum(B)
        else:
            A, B, nu = list(row["A"]), list(row["B"]), int(row["nu"])
        rows_A.append(A)
        rows_B.append(B)
        nus.append(nu)
        kinds.append(row.get("kind", "cusp"))
    seeds = None
    if "shapes" in data:
        seeds = [parse_complex(s["re"], s.get("im", "0")) for s in data["shapes"]]
    return GluingSystem(rows_A, rows_B, nus, kinds), seeds


def gluing_to_json(sysm: GluingSystem, shapes: Sequence | None = None, digits: int = 30) -> dict:
    """Export in the format read by :func:`ingest_gluing`."""
    out = {"equations": [{"A": a, "B": b, "nu": v, "kind": k}
                         for a, b, v, k in zip(sysm.A, sysm.B, sysm.nu, sysm.kinds)]}
    if shapes is not None:
        out["shapes"] = [{"re": to_acb(z).real.mid().str(digits, radius=False),
                          "im": to_acb(z).imag.mid().str(digits, radius=False)} for z in shapes]
    return out


# ---------------------------------------------------------------------------
# shapes


@dataclass
class ShapeSolution:
    shapes: list[acb]
    log_z: list[acb]
    log_zpp: list[acb]
    residual: float
    system: GluingSystem
    iterations: int = 0

    @property
    def log_zp(self) -> list[acb]:
        pi_i = _pi_i()
        return [(pi_i - a - b).mid() for a, b in zip(self.log_z, self.log_zpp)]

    def zpp(self, i: int) -> acb:
        return (1 - 1 / self.shapes[i]).mid()

    def zp(self, i: int) -> acb:
        return (1 / (1 - self.shapes[i])).mid()

    def log_shape(self, i: int, kind: int) -> acb:
        if kind == Z:
            return self.log_z[i]
        if kind == ZPP:
            return self.log_zpp[i]
        return (_pi_i() - self.log_z[i] - self.log_zpp[i]).mid()

    def is_geometric(self) -> bool:
        """Positively oriented: every shape in the closed upper half plane and
        positive total volume (flat tetrahedra occur in layered complexes)."""
        return all(z.imag > -tolerance(40) for z in self.shapes) and self.volume() > 0

    def negatively_oriented(self) -> list[int]:
        return [i for i, z in enumerate(self.shapes) if z.imag < -tolerance(40)]

    def volume(self) -> float:
        return float(sum((bloch_wigner(z) for z in self.shapes), arb(0)).mid())

    def conjugate(self) -> "ShapeSolution":
        """The complex-conjugate solution with freshly fixed log branches.

        The quantum side uses the fiber orientation opposite to the one in
        which the tetrahedra are positively oriented, so invariants are fed
        the conjugate of the geometric solution."""
        shapes = [z.conjugate().mid() for z in self.shapes]
        log_z, log_zpp = _fix_branches(self.system, shapes)
        return ShapeSolution(shapes, log_z, log_zpp, gluing_residual(self.system, shapes), self.system,
                             self.iterations)

    def digest(self) -> str:
        h = hashlib.sha256()
        for z in self.shapes:
            h.update(z.real.mid().str(30, radius=False).encode())
            h.update(z.imag.mid().str(30, radius=False).encode())
        return h.hexdigest()[:16]


def bloch_wigner(z: acb) -> arb:
    z = to_acb(z)
    return (z.polylog(2).imag + (1 - z).arg() * abs(z).log()).mid()


def _residual_vector(sysm: GluingSystem, zs: Sequence[acb], all_rows: bool = False) -> list[acb]:
    logs = [z.log() for z in zs]
    logpp = [(1 - 1 / z).log() for z in zs]
    A, B, nu = sysm.all_rows() if all_rows else (sysm.A, sysm.B, sysm.nu)
    pi = arb.pi()
    out = []
    for a, b, v in zip(A, B, nu):
        r = sum((ai * l for ai, l in zip(a, logs) if ai), acb(0))
        r += sum((bi * l for bi, l in zip(b, logpp) if bi), acb(0))
        r -= acb(0, pi * v)
        k = round(float((r.imag / (2 * pi)).mid()))
        out.append((r - acb(0, 2 * pi * k)).mid())
    return out


def gluing_residual(sysm: GluingSystem, zs: Sequence[acb]) -> float:
    """max |z^A z''^B - (-1)^nu| over every edge and cusp row."""
    A, B, nu = sysm.all_rows()
    zpp = [(1 - 1 / z) for z in zs]
    worst = 0.0
    for a, b, v in zip(A, B, nu):
        p = acb(1)
        for ai, z in zip(a, zs):
            if ai:
                p *= z ** ai
        for bi, w in zip(b, zpp):
            if bi:
                p *= w ** bi
        worst = max(worst, mag(p - (-1) ** (v % 2)))
    return worst


def _newton(sysm: GluingSystem, zs: list[acb], target: float, max_iter: int = 80):
    n = sysm.size
    res = _residual_vector(sysm, zs)
    norm_r = max(mag(r) for r in res)
    for it in range(max_iter):
        if norm_r < target:
            return zs, norm_r, it
        jac = flint.acb_mat(n, n)
        for j in range(n):
            for k in range(n):
                z = zs[k]
                jac[j, k] = sysm.A[j][k] / z + sysm.B[j][k] / (z * (z - 1))
        rhs = flint.acb_mat([[-r] for r in res])
        try:
            step = jac.solve(rhs, nonstop=True)
        except (ZeroDivisionError, ValueError):
            raise NonConvergence("singular Jacobian")
        step = [step[k, 0].mid() for k in range(n)]
        if any(not s.is_finite() for s in step):
            raise NonConvergence("singular Jacobian")
        lam = 1.0
        for _ in range(30):
            trial = [(z + lam * s).mid() for z, s in zip(zs, step)]
            if all(not t.is_zero() and mag(t - 1) > 1e-30 for t in trial):
                tres = _residual_vector(sysm, trial)
                tn = max(mag(r) for r in tres)
                if tn < norm_r or tn < target:
                    break
            lam /= 2
        else:
            raise NonConvergence("damped Newton step failed to decrease the residual")
        zs, res, norm_r = trial, tres, tn
    if norm_r < target:
        return zs, norm_r, max_iter
    raise NonConvergence(f"residual {norm_r:.3e} after {max_iter} iterations")


def newton_refine(sysm: GluingSystem, seed: Sequence | None = None, target_bits: int | None = None,
                  restarts: int = 16, rng_seed: int = 0, require_geometric: bool = True,
                  expected_volume: float | None = None) -> ShapeSolution:
    """Solve the gluing equations to ``target_bits`` and fix log branches."""
    n = sysm.size
    if int_rank(sysm.matrix()) < n or len(sysm.A) != n:
        raise RankDeficient("gluing matrix (A|B) is not of full rank")
    bits = target_bits or get_precision()
    with working_precision(bits + 32):
        target = 2.0 ** (-bits + 8)
        rng = random.Random(rng_seed)
        base = acb(0.5, math.sqrt(3) / 2)
        starts = []
        if seed is not None:
            starts.append([to_acb(s) for s in seed])
        else:
            starts.append([base] * n)
        for _ in range(restarts):
            ref = starts[0]
            starts.append([(z + acb(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3))).mid() for z in ref])
        last = None
        for zs in starts:
            try:
                sol, err, it = _newton(sysm, list(zs), target)
            except NonConvergence as exc:
                last = exc
                continue
            if require_geometric:
                # the equations have integer coefficients, so the conjugate of a
                # solution is one too; keep the positively oriented copy
                vol = float(sum((bloch_wigner(z) for z in sol), arb(0)).mid())
                if vol < 0:
                    sol, vol = [z.conjugate() for z in sol], -vol
                if vol < 1e-6 or (expected_volume is not None and abs(vol - expected_volume) > 1e-6):
                    last = NonConvergence(f"converged to a solution of volume {vol:.8f}")
                    continue
            break
        else:
            raise last or NonConvergence("no start converged")
    shapes = [z.mid() for z in sol]
    log_z, log_zpp = _fix_branches(sysm, shapes)
    return ShapeSolution(shapes, log_z, log_zpp, gluing_residual(sysm, shapes), sysm, it)


def _fix_branches(sysm: GluingSystem, shapes: Sequence[acb]) -> tuple[list[acb], list[acb]]:
    n = len(shapes)
    log_z = [z.log().mid() for z in shapes]
    log_zpp = [(1 - 1 / z).log().mid() for z in shapes]
    pi = arb.pi()
    A, B, nu = sysm.all_rows()
    ks = []
    for a, b, v in zip(A, B, nu):
        r = sum((ai * l for ai, l in zip(a, log_z) if ai), acb(0))
        r += sum((bi * l for bi, l in zip(b, log_zpp) if bi), acb(0))
        r -= acb(0, pi * v)
        ks.append(round(float((r.imag / (2 * pi)).mid())))
    if any(ks):
        mat = [a + b for a, b in zip(A, B)]
        shift = solve_integer(mat, [-k for k in ks])
        if shift is None:
            raise RankDeficient("no integral branch adjustment makes the log equations exact")
        two_pi_i = _two_pi_i()
        log_z = [(l + two_pi_i * s).mid() for l, s in zip(log_z, shift[:n])]
        log_zpp = [(l + two_pi_i * s).mid() for l, s in zip(log_zpp, shift[n:])]
    return log_z, log_zpp


def branch_identity_defect(sol: ShapeSolution) -> float:
    A, B, nu = sol.system.all_rows()
    worst = 0.0
    for a, b, v in zip(A, B, nu):
        r = sum((ai * l for ai, l in zip(a, sol.log_z) if ai), acb(0))
        r += sum((bi * l for bi, l in zip(b, sol.log_zpp) if bi), acb(0))
        worst = max(worst, mag(r - acb(0, arb.pi() * v)))
    return worst


# ---------------------------------------------------------------------------
# shear-bend coordinates


@dataclass
class ShearBendLayers:
    log_t: list[list[acb]]  # [layer][edge]
    log_zpp: list[acb]  # per flip, theta_i = exp(log z''_i / n)

    @property
    def num_layers(self) -> int:
        return len(self.log_t)

    def t(self, layer: int, edge: int) -> acb:
        return self.log_t[layer][edge].exp().mid()

    def layer(self, i: int) -> list[acb]:
        return [self.t(i, e) for e in range(len(self.log_t[i]))]

    def theta(self, i: int, n: int) -> acb:
        return (self.log_zpp[i] / n).exp().mid()


def shear_bend_layers(lt: LayeredTriangulation, sol: ShapeSolution, audit: bool = True) -> ShearBendLayers:
    n = lt.num_tetrahedra
    E = lt.num_edges
    pi_i = _pi_i()
    log_t = []
    for layer in range(n + 1):
        row = []
        for x in range(E):
            acc = -pi_i
            for tet, kind in lt.above(layer, x):
                acc += sol.log_shape(tet, kind)
            row.append(acc.mid())
        log_t.append(row)
    sbl = ShearBendLayers(log_t, list(sol.log_zpp))
    for layer in range(n + 1):
        for x in range(E):
            if mag(sbl.t(layer, x) + 1) < 1e-30:
                raise DegenerateShear(f"shear-bend of edge {x} in layer {layer} equals -1")
    if audit:
        audit_shear_bends(lt, sol, sbl)
    return sbl


def classical_mutation(eps: Sequence[Sequence[int]], t: Sequence[acb], k: int) -> list[acb]:
    out = []
    tk = t[k]
    for i, ti in enumerate(t):
        if i == k:
            out.append((1 / tk).mid())
            continue
        e = eps[i][k]
        if e == 0:
            out.append(ti)
        elif e > 0:
            out.append((ti * (1 + 1 / tk) ** (-e)).mid())
        else:
            out.append((ti * (1 + tk) ** (-e)).mid())
    return out


def audit_shear_bends(lt: LayeredTriangulation, sol: ShapeSolution, sbl: ShearBendLayers) -> dict[str, float]:
    """Flipped edges, classical propagation, phi-invariance and parabolicity."""
    tol = tolerance(40)
    n = lt.num_tetrahedra
    E = lt.num_edges
    worst = {"flipped": 0.0, "propagation": 0.0, "monodromy": 0.0, "parabolic": 0.0}
    tris = lt.cert.triangulations
    for i, tet in enumerate(lt.tetrahedra):
        zp = sol.zp(i)
        worst["flipped"] = max(worst["flipped"], mag(sbl.t(i, tet.edge) + zp), mag(sbl.t(i + 1, tet.edge) + 1 / zp))
        nxt = classical_mutation(epsilon_form(tris[i]), sbl.layer(i), tet.edge)
        worst["propagation"] = max(worst["propagation"], max(mag(a - b) for a, b in zip(nxt, sbl.layer(i + 1))))
    for x in range(E):
        worst["monodromy"] = max(worst["monodromy"], mag(sbl.t(n, x) - sbl.t(0, lt.monodromy_edge(x))))
    for cv in lt.cert.start.puncture_vectors():
        p = acb(1)
        for e, m in enumerate(cv):
            if m:
                p *= sbl.t(0, e) ** m
        worst["parabolic"] = max(worst["parabolic"], mag(p - 1))
    bad = {k: v for k, v in worst.items() if v > tol}
    if bad:
        raise DegenerateShear(f"shear-bend audit failed: {bad}")
    return worst


# ---------------------------------------------------------------------------
# Kashaev coordinates


@dataclass
class KashaevCoordinateLift:
    lattice: KashaevLattice
    log_sigma0: list[acb]  # on the standard basis of L_lambda_0
    log_ptolemy: list[acb]  # decorated, per edge of lambda_0
    decoration: list[acb]  # log of the puncture scalings applied
    twist: tuple[int, ...]  # torsion choice in the Ptolemy logarithms
    audits: dict = field(default_factory=dict)

    @property
    def sigma0(self) -> list[acb]:
        return [v.exp().mid() for v in self.log_sigma0]

    def shat0(self, n: int) -> list[acb]:
        return [(v / n).exp().mid() for v in self.log_sigma0]


def ptolemy_matrix(tri) -> list[list[int]]:
    """Row e: log t_e = log l_a + log l_c - log l_b - log l_d."""
    E = tri.num_edges
    out = []
    for e in range(E):
        row = [0] * E
        _, a, b = tri.rotated_face(e)
        _, c, d = tri.rotated_face(~e)
        for lab, s in ((a, 1), (c, 1), (b, -1), (d, -1)):
            row[norm(lab)] += s
        out.append(row)
    return out


def sigma_from_ptolemy(tri, l: Sequence[acb]) -> list[acb]:
    out = []
    for face in tri.faces:
        s0, s1, s2 = face
        out.append((l[norm(s1)] / l[norm(s2)]).mid())
        out.append((l[norm(s2)] / l[norm(s0)]).mid())
    return out


def log_sigma_from_ptolemy(tri, logl: Sequence[acb]) -> list[acb]:
    out = []
    for face in tri.faces:
        s0, s1, s2 = face
        out.append((logl[norm(s1)] - logl[norm(s2)]).mid())
        out.append((logl[norm(s2)] - logl[norm(s0)]).mid())
    return out


def propagate_ptolemy(cert: MappingClassCertificate, l0: Sequence[acb]) -> list[list[acb]]:
    layers = [list(l0)]
    for f in cert.frames:
        l = list(layers[-1])
        e = f.edge
        a, b, c, d = (l[norm(x)] for x in (f.a, f.b, f.c, f.d))
        l[e] = ((a * c + b * d) / l[e]).mid()
        layers.append(l)
    return layers


def _ptolemy_candidates(tri, log_t: Sequence[acb]):
    """Logarithmic Ptolemy solutions of the layer-0 shears, one per torsion twist."""
    C = ptolemy_matrix(tri)
    E = len(C)
    U, D, V = smith_form(C)
    rank = sum(1 for i in range(E) if D[i][i])
    ul = [sum((U[i][j] * log_t[j] for j in range(E) if U[i][j]), acb(0)) for i in range(E)]
    two_pi = 2 * arb.pi()
    for i in range(rank, E):
        k = float((ul[i].imag / two_pi).mid())
        if abs(ul[i].real.mid()) > tolerance(80) or abs(k - round(k)) > tolerance(80):
            raise NoInvariantDecoration("layer-0 shears violate a Ptolemy consistency condition")
    torsion = [(i, D[i][i]) for i in range(rank) if D[i][i] > 1]
    choices = [()]
    for _, d in torsion:
        choices = [c + (j,) for c in choices for j in range(d)]
    for twist in choices:
        y = [acb(0)] * E
        for i in range(rank):
            y[i] = ul[i] / D[i][i]
        for (i, d), j in zip(torsion, twist):
            y[i] += acb(0, two_pi * j / d)
        x = [sum((V[r][i] * y[i] for i in range(E) if V[r][i]), acb(0)).mid() for r in range(E)]
        yield twist, x


def _decoration_fix(cert: MappingClassCertificate, log_l0: Sequence[acb], lN: Sequence[acb]):
    """Solve for puncture scalings making lambda_N Ptolemy data a constant
    multiple of lambda_0 data under the monodromy.  Returns log T or None."""
    tri = cert.start
    E = tri.num_edges
    p = tri.num_punctures
    perm = cert.puncture_permutation
    inverse = cert._inverse
    log_u = []
    for e in range(E):
        y = norm(inverse[e])
        log_u.append((lN[y].log() - log_l0[e]).mid())
    Dm = []
    for e in range(E):
        row = [0] * (p + 1)
        for v in (tri.tail_puncture(e), tri.head_puncture(e)):
            row[perm[v]] += 1
            row[v] -= 1
        row[p] = -1
        Dm.append(row)
    U, S, V = smith_form(Dm)
    cols = p + 1
    rank = sum(1 for i in range(min(E, cols)) if S[i][i])
    rhs = [(-sum((U[i][j] * log_u[j] for j in range(E) if U[i][j]), acb(0))).mid() for i in range(E)]
    for i in range(rank, E):
        if mag(rhs[i].exp() - 1) > tolerance(80):
            return None
    two_pi = 2 * arb.pi()
    y = [acb(0)] * cols
    for i in range(rank):
        val = rhs[i]
        k = round(float((val.imag / two_pi).mid()))
        y[i] = (val - acb(0, two_pi * k)) / S[i][i]
    x = [sum((V[r][i] * y[i] for i in range(cols) if V[r][i]), acb(0)).mid() for r in range(cols)]
    return x[:p]


def lift_to_kashaev_coordinates(lt: LayeredTriangulation, sbl: ShearBendLayers,
                                lattice: KashaevLattice | None = None) -> KashaevCoordinateLift:
    cert = lt.cert
    tri = cert.start
    lattice = lattice or kashaev_lattice(tri)
    E = tri.num_edges
    tol = tolerance(40)
    for twist, logl in _ptolemy_candidates(tri, sbl.log_t[0]):
        l0 = [v.exp().mid() for v in logl]
        lN = propagate_ptolemy(cert, l0)[-1]
        logT = _decoration_fix(cert, logl, lN)
        if logT is None:
            continue
        dec = [(logl[e] + logT[tri.tail_puncture(e)] + logT[tri.head_puncture(e)]).mid() for e in range(E)]
        log_sigma = log_sigma_from_ptolemy(tri, dec)
        lift = KashaevCoordinateLift(lattice, log_sigma, dec, list(logT), twist)
        audits = audit_lift(lt, sbl, lift)
        if audits["invariance"] < tol:
            lift.audits = audits
            return lift
    raise NoInvariantDecoration("no torsion twist admits a monodromy-invariant decoration")


def audit_lift(lt: LayeredTriangulation, sbl: ShearBendLayers, lift: KashaevCoordinateLift) -> dict[str, float]:
    cert = lt.cert
    tri = cert.start
    lat = lift.lattice
    sigma = lift.sigma0
    E = tri.num_edges

    def evaluate(values, k):
        out = acb(1)
        for v, e in zip(values, k):
            if e:
                out *= v ** e
        return out

    worst = {}
    # pullback along i_CFr
    worst["pullback"] = max(mag(evaluate(sigma, [lat.cfr[i][e] for i in range(lat.rank)]) - sbl.t(0, e))
                            for e in range(E))
    # each layer: Ptolemy-propagated sigma reproduces the shears
    layers = propagate_ptolemy(cert, [v.exp() for v in lift.log_ptolemy])
    err = 0.0
    for i, (t, l) in enumerate(zip(cert.triangulations, layers)):
        sig = sigma_from_ptolemy(t, l)
        lat_i = kashaev_lattice(t)
        for e in range(E):
            err = max(err, mag(evaluate(sig, [lat_i.cfr[r][e] for r in range(lat_i.rank)]) - sbl.t(i, e)))
    worst["layers"] = err
    # phi-invariance: sigma_N(phi_* x) = sigma_0(x)
    sigN = sigma_from_ptolemy(cert.end, layers[-1])
    phi = isometry_lattice_map(tri, cert.end, cert.isometry)
    worst["invariance"] = max(mag(evaluate(sigN, [row[j] for row in phi]) - sigma[j]) for j in range(lat.rank))
    # values on the orthogonal complement of the Chekhov-Fock image
    gens = [[lat.cfr[i][e] for i in range(lat.rank)] for e in range(E)]
    perp = orthogonal_complement(lat.gram, gens)
    lift_vals = [evaluate(sigma, v) for v in perp]
    worst["homology_character"] = max((mag(v - 1) for v in lift_vals), default=0.0)
    worst["homology_character_sign"] = max((mag(v * v - 1) for v in lift_vals), default=0.0)
    return worst


# ---------------------------------------------------------------------------
# serialization


def solution_to_json(sol: ShapeSolution, digits: int | None = None) -> dict:
    digits = digits or int(get_precision() * 0.30103) + 5

    def c(x):
        x = to_acb(x)
        return {"re": x.real.mid().str(digits, radius=False), "im": x.imag.mid().str(digits, radius=False)}

    return {
        "precision": get_precision(),
        "shapes": [c(z) for z in sol.shapes],
        "log_z": [c(z) for z in sol.log_z],
        "log_zpp": [c(z) for z in sol.log_zpp],
        "residual": sol.residual,
        "digest": sol.digest(),
    }


def solution_from_json(data: dict, sysm: GluingSystem) -> ShapeSolution:
    p = lambda d: parse_complex(d["re"], d["im"])
    shapes = [p(z) for z in data["shapes"]]
    return ShapeSolution(shapes, [p(z) for z in data["log_z"]], [p(z) for z in data["log_zpp"]],
                         gluing_residual(sysm, shapes), sysm)
