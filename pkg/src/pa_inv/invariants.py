"""Cyclic dilogarithms, the flip factorization of coordinate changes and
the intertwiners A^K, A^CF and the gl_1 part, with their normalized traces.

A coordinate change along a flip sequence factors as
``Ad(Psi(X_0#)) ... Ad(Psi(X_{N-1}#)) o M_N`` with rescaled monomial maps, so
the intertwiner of a mapping class is a product of functional-calculus
matrices times one monomial intertwiner.
"""
from __future__ import annotations

import itertools
from fractions import Fraction
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

from .geometry import DegenerateShear, KashaevCoordinateLift, ShearBendLayers
from .numeric import (
    DenseMatrix,
    GPMatrix,
    RootOfUnity,
    acb,
    arb,
    identity,
    inverse,
    int_det,
    int_identity,
    int_matmul,
    int_transpose,
    integer_kernel,
    kron,
    mag,
    max_abs,
    principal_root,
    smith_form,
    solve_integer,
    submatrix,
    to_acb,
    tolerance,
    trace,
)
from .qtorus import (
    CentralCharacterMismatch,
    MonomialMap,
    ScalarMap,
    SkewLattice,
    TorusRepresentation,
    functional_calculus_gp,
    ladder_intertwiner,
    monomial_intertwiner,
    skew_normal_form,
    tensor_representation,
    weight_block_projectors,
)
from .surface import (
    MappingClassCertificate,
    cf_flip_lattice_map,
    epsilon_form,
    flip_lattice_map,
    isometry_edge_map,
    isometry_lattice_map,
    kashaev_lattice,
    mat_vec,
    orthogonal_complement,
    side_vector,
)


class BlockLeakage(RuntimeError):
    pass


class SingularOperator(ValueError):
    pass


class VerificationFailed(AssertionError):
    pass


class FormIncompatible(ValueError):
    pass


# ---------------------------------------------------------------------------
# cyclic dilogarithm


def cyclic_dilog(q: RootOfUnity, x, step: int = 1) -> acb:
    """prod_{j=1}^{n-1} (1 - q^{step j} x)^j."""
    x = to_acb(x)
    out = acb(1)
    for j in range(1, q.n):
        out *= (1 - q.power(step * j) * x) ** j
    return out.mid()


@dataclass
class PsiTable:
    q: RootOfUnity
    t: acb
    theta: acb
    y: acb
    c_y: acb
    values: list[acb]  # Psi(y q^{2k})

    @property
    def roots(self) -> list[acb]:
        return [(self.y * self.q.power(2 * k)).mid() for k in range(self.q.n)]

    def value_at(self, x) -> acb:
        x = to_acb(x)
        for k, r in enumerate(self.roots):
            if mag(r - x) < tolerance(40) * max(1.0, mag(x)):
                return self.values[k]
        raise KeyError("not an n-th root of t")

    def functional_equation_defect(self) -> float:
        n = self.q.n
        worst = 0.0
        for k in range(n):
            x = self.roots[k]
            lhs = self.values[(k + 1) % n]
            rhs = self.theta * (1 + self.q.power(1) * x) * self.values[k]
            worst = max(worst, mag(lhs - rhs))
        return worst

    def product_defect(self) -> float:
        p = acb(1)
        for v in self.values:
            p *= v
        return mag(p - 1)

    def power_defect(self) -> float:
        """Psi(x)^n = c D_{q^2}(-q x) with c = (1 + t)^{-(n-1)/2}."""
        n = self.q.n
        c = self.theta ** (n * (n - 1) // 2)
        worst = 0.0
        for x, v in zip(self.roots, self.values):
            worst = max(worst, mag(v ** n - c * cyclic_dilog(self.q, -self.q.power(1) * x, 2)))
        return worst


def psi_table(q: RootOfUnity, t, log_t=None, log_zpp=None) -> PsiTable:
    t = to_acb(t)
    if t.is_zero() or mag(t + 1) < 1e-30:
        raise DegenerateShear("Psi needs t != 0, -1")
    n = q.n
    log_t = to_acb(log_t) if log_t is not None else t.log()
    log_zpp = to_acb(log_zpp) if log_zpp is not None else (1 / (1 + t)).log()
    y = (log_t / n).exp().mid()
    theta = (log_zpp / n).exp().mid()
    cyn = theta ** (n * (n - 1) // 2) * cyclic_dilog(q, -q.power(1) * y, 2)
    c_y = principal_root(cyn, n)
    values = []
    acc = c_y
    for k in range(n):
        values.append(acc.mid())
        acc = acc * theta * (1 + q.power(2 * k + 1) * y)
    return PsiTable(q, t, theta, y, c_y, values)


# ---------------------------------------------------------------------------
# flip chains


def _apply(m, v):
    return [sum(row[j] * v[j] for j in range(len(v)) if v[j]) for row in m]


def _col(m, j):
    return [row[j] for row in m]


def _pair(gram, x, y) -> int:
    return sum(x[i] * gram[i][j] * y[j] for i in range(len(x)) if x[i] for j in range(len(y)) if y[j])


@dataclass
class FlipStep:
    index: int
    flip_matrix: list[list[int]]  # m_i: L_{i+1} -> L_i
    scalar_before: ScalarMap
    scalar_after: ScalarMap
    pushed: list[int]  # M_i chi_e in L_0
    coefficient: acb  # X# = coefficient * x^pushed
    psi: PsiTable


@dataclass
class FlipFactorization:
    steps: list[FlipStep]
    composed: list[list[int]]  # M_N
    phi: list[list[int]]  # phi_*: L_0 -> L_N
    initial_scalar: ScalarMap
    final_scalar: ScalarMap
    gram: tuple

    @property
    def monodromy_map(self) -> list[list[int]]:
        return int_matmul(self.composed, self.phi)

    def boundary_map(self) -> MonomialMap:
        f = self.monodromy_map
        return MonomialMap(tuple(map(tuple, f)), self.final_scalar.compose(self.phi), self.initial_scalar)

    def discrepancy(self, n: int) -> list[acb]:
        """(s_N o phi_*)/s_0 on the standard basis: n-th roots of unity."""
        src = self.final_scalar.compose(self.phi)
        return [(a / b).mid() for a, b in zip(src.values, self.initial_scalar.values)]


def _chain(grams, flip_maps, edge_vectors, phi, scalar0: ScalarMap, sbl: ShearBendLayers,
           flipped: Sequence[int], q: RootOfUnity) -> FlipFactorization:
    n = q.n
    rank = len(grams[0])
    M = int_identity(rank)
    s = scalar0
    steps = []
    for i, (m, chi) in enumerate(zip(flip_maps, edge_vectors)):
        theta = sbl.theta(i, n)
        pushed = _apply(M, chi)
        coef = (s(chi) / scalar0(pushed)).mid()
        psi = psi_table(q, sbl.t(i, flipped[i]), sbl.log_t[i][flipped[i]], sbl.log_zpp[i])
        vals = []
        for j in range(len(m[0])):
            col = _col(m, j)
            vals.append((s(col) * theta ** _pair(grams[i], col, chi)).mid())
        after = ScalarMap(tuple(vals))
        steps.append(FlipStep(i, m, s, after, pushed, coef, psi))
        M = int_matmul(M, m)
        s = after
    return FlipFactorization(steps, M, phi, scalar0, s, grams[0])


def kashaev_chain(cert: MappingClassCertificate, sbl: ShearBendLayers, scalar0: ScalarMap,
                  q: RootOfUnity) -> FlipFactorization:
    tris = cert.triangulations
    grams = [kashaev_lattice(t).gram for t in tris]
    maps = [flip_lattice_map(a, b, f) for a, b, f in zip(tris, tris[1:], cert.frames)]
    chis = [[x + y for x, y in zip(side_vector(t, f.e1), side_vector(t, f.e2))] for t, f in zip(tris, cert.frames)]
    phi = isometry_lattice_map(cert.start, cert.end, cert.isometry)
    return _chain(grams, maps, chis, phi, scalar0, sbl, [f.edge for f in cert.frames], q)


def cf_chain(cert: MappingClassCertificate, sbl: ShearBendLayers, scalar0: ScalarMap,
             q: RootOfUnity) -> FlipFactorization:
    tris = cert.triangulations
    grams = [epsilon_form(t) for t in tris]
    maps = [cf_flip_lattice_map(t, f) for t, f in zip(tris, cert.frames)]
    E = cert.start.num_edges
    chis = [[int(j == f.edge) for j in range(E)] for f in cert.frames]
    phi = isometry_edge_map(cert.isometry, E)
    return _chain(grams, maps, chis, phi, scalar0, sbl, [f.edge for f in cert.frames], q)


def chain_flip_factorization(cert, sbl, lift: KashaevCoordinateLift, q: RootOfUnity) -> FlipFactorization:
    return kashaev_chain(cert, sbl, ScalarMap(tuple(lift.shat0(q.n))), q)


def audit_chain_lattices(cert: MappingClassCertificate) -> int:
    """Max defect of m^K o i' = i o m^CF over all flips (0 when compatible)."""
    tris = cert.triangulations
    worst = 0
    for a, b, f in zip(tris, tris[1:], cert.frames):
        mk = flip_lattice_map(a, b, f)
        mcf = cf_flip_lattice_map(a, f)
        ia = [list(r) for r in kashaev_lattice(a).cfr]
        ib = [list(r) for r in kashaev_lattice(b).cfr]
        lhs = int_matmul(mk, ib)
        rhs = int_matmul(ia, mcf)
        worst = max(worst, max(abs(x - y) for r1, r2 in zip(lhs, rhs) for x, y in zip(r1, r2)))
    return worst


# ---------------------------------------------------------------------------
# assembly


def _timed(record: dict | None, key: str, start: float) -> None:
    if record is not None:
        record[key] = record.get(key, 0.0) + time.time() - start


def psi_factor(rep: TorusRepresentation, step: FlipStep) -> DenseMatrix:
    g = rep.monomial(step.pushed).times_scalar(step.coefficient)
    return functional_calculus_gp(g, rep.n, rep.qpow, step.psi.values, base_root=step.psi.y)


def assemble_intertwiner(rep_source: TorusRepresentation, rep_target: TorusRepresentation,
                         chain: FlipFactorization) -> tuple[DenseMatrix, DenseMatrix]:
    """(A, B) with A = Psi(X_0#) ... Psi(X_{N-1}#) B in rep_target."""
    b = monomial_intertwiner(rep_source, rep_target, chain.boundary_map())
    prod = None
    for step in chain.steps:
        f = psi_factor(rep_target, step)
        prod = f if prod is None else (prod * f).mid()
    a = b if prod is None else (prod * b).mid()
    return a, b


def kashaev_representation(lattice, scalar: ScalarMap, q: RootOfUnity) -> TorusRepresentation:
    lat = SkewLattice(lattice.gram)
    family = [list(v) for v in lattice.puncture_images[:-1]] if lattice.tri.num_punctures > 1 else []
    basis = skew_normal_form(lat, family)
    return TorusRepresentation(lat, q, scalar, basis)


def compute_A_K(cert, lift: KashaevCoordinateLift, chain: FlipFactorization, q: RootOfUnity):
    rep = kashaev_representation(lift.lattice, chain.initial_scalar, q)
    a, b = assemble_intertwiner(rep, rep, chain)
    return rep, a, b


# ---------------------------------------------------------------------------
# puncture weights


@dataclass(frozen=True)
class PunctureWeights:
    exponents: tuple[int, ...]  # zeta_v = q^{l_v}
    n: int

    def __post_init__(self):
        if sum(self.exponents) % self.n:
            raise ValueError("puncture weights must multiply to 1")

    def permuted(self, perm: Sequence[int]) -> "PunctureWeights":
        """phi(zeta): (phi zeta)_{phi(v)} = zeta_v."""
        out = [0] * len(self.exponents)
        for v, w in enumerate(perm):
            out[w] = self.exponents[v]
        return PunctureWeights(tuple(out), self.n)

    def values(self, q: RootOfUnity) -> list[acb]:
        return [q.power(l) for l in self.exponents]

    @classmethod
    def all(cls, p: int, n: int) -> list["PunctureWeights"]:
        out = [()]
        for _ in range(p - 1):
            out = [w + (l,) for w in out for l in range(n)]
        return [cls(w + ((-sum(w)) % n,), n) for w in out]


def _root_exponent(q: RootOfUnity, x: acb) -> int:
    for m in range(q.n):
        if mag(q.power(m) - x) < tolerance(40):
            return m
    raise CentralCharacterMismatch("value is not an n-th root of unity")


def _character_solving(q: RootOfUnity, rows: list[list[int]], targets: list[int]) -> list[int]:
    """Exponents x (mod n) with rows . x = targets (mod n)."""
    n = q.n
    k = len(rows[0])
    aug = [list(r) + [n * int(i == j) for j in range(len(rows))] for i, r in enumerate(rows)]
    sol = solve_integer(aug, list(targets))
    if sol is None:
        raise CentralCharacterMismatch("puncture weights are not realizable")
    return [x % n for x in sol[:k]]


def cf_scalar(cert, lift: KashaevCoordinateLift, weights: PunctureWeights, q: RootOfUnity) -> ScalarMap:
    """Chekhov-Fock scalar s^K o i_CFr twisted by a mu_n character hitting the weights."""
    lat = lift.lattice
    shat = ScalarMap(tuple(lift.shat0(q.n)))
    E = cert.start.num_edges
    base = [shat([lat.cfr[r][e] for r in range(lat.rank)]) for e in range(E)]
    cvs = [list(c) for c in lat.puncture_vectors]
    rows = cvs + [[1] * E]
    targets = []
    for v, c in enumerate(cvs):
        have = _root_exponent(q, shat(mat_vec(lat.cfr, c)))
        targets.append(weights.exponents[v] - have)
    targets.append(0)
    kappa = _character_solving(q, rows, targets)
    return ScalarMap(tuple((b * q.power(k)).mid() for b, k in zip(base, kappa)))


def cf_representation(tri, scalar: ScalarMap, q: RootOfUnity) -> TorusRepresentation:
    lat = SkewLattice(tuple(map(tuple, epsilon_form(tri))))
    return TorusRepresentation(lat, q, scalar)


def compute_A_CF(cert, sbl, lift, weights: PunctureWeights, q: RootOfUnity):
    """A^CF from weights zeta to phi(zeta); returns (rep_source, rep_target, A, chain)."""
    target_w = weights.permuted(cert.puncture_permutation)
    s_src = cf_scalar(cert, lift, weights, q)
    s_tgt = cf_scalar(cert, lift, target_w, q)
    rep_src = cf_representation(cert.start, s_src, q)
    rep_tgt = cf_representation(cert.start, s_tgt, q)
    chain = cf_chain(cert, sbl, s_tgt, q)
    a, _ = assemble_intertwiner(rep_src, rep_tgt, chain)
    return rep_src, rep_tgt, a, chain


# ---------------------------------------------------------------------------
# homology part


@dataclass
class HomologyData:
    form: list[list[int]]  # intersection form on H_1(Sigma), quantum-side orientation
    action: list[list[int]]  # phi_* (columns = images)
    puncture_classes: list[list[int]]  # gamma_v
    capped_action: list[list[int]] | None = None

    def __post_init__(self):
        f = [list(r) for r in self.action]
        if int_matmul(int_matmul(int_transpose(f), self.form), f) != [list(r) for r in self.form]:
            raise FormIncompatible("homology action does not preserve the intersection form")

    @property
    def rank(self) -> int:
        return len(self.form)

    def lattice(self) -> SkewLattice:
        return SkewLattice(tuple(tuple(2 * x for x in row) for row in self.form))

    def to_json(self) -> dict:
        out = {"form": self.form, "action": self.action, "puncture_classes": self.puncture_classes}
        if self.capped_action is not None:
            out["capped_action"] = self.capped_action
        return out

    @classmethod
    def from_json(cls, data: dict) -> "HomologyData":
        return cls(data["form"], data["action"], data["puncture_classes"], data.get("capped_action"))


def homology_scalar(hd: HomologyData, weights: PunctureWeights, q: RootOfUnity) -> ScalarMap:
    """Trivial reduction character with gamma_v -> zeta_v."""
    rows = [list(g) for g in hd.puncture_classes]
    if not rows or not any(any(r) for r in rows):
        if any(weights.exponents):
            raise CentralCharacterMismatch("puncture classes vanish but weights are nontrivial")
        return ScalarMap.ones(hd.rank)
    x = _character_solving(q, rows, list(weights.exponents))
    return ScalarMap(tuple(q.power(k) for k in x))


def homology_representation(hd: HomologyData, weights: PunctureWeights, q: RootOfUnity) -> TorusRepresentation:
    lat = hd.lattice()
    return TorusRepresentation(lat, q, homology_scalar(hd, weights, q), skew_normal_form(lat))


def compute_A_H(hd: HomologyData, perm: Sequence[int], weights: PunctureWeights, q: RootOfUnity):
    """Intertwiner W^H_zeta -> W^H_{phi zeta}; returns (rep_source, rep_target, A)."""
    f = [list(r) for r in hd.action]
    rep_src = homology_representation(hd, weights, q)
    rep_tgt = homology_representation(hd, weights.permuted(perm), q)
    s_tgt = rep_tgt.scalar
    fmap = MonomialMap(tuple(map(tuple, f)), s_tgt.compose(f), s_tgt)
    return rep_src, rep_tgt, monomial_intertwiner(rep_src, rep_tgt, fmap)


def homology_order(capped_action: Sequence[Sequence[int]], n: int) -> int:
    """|H_1(M; Z/n)| of the closed-up mapping torus: n |coker(phi - I) (x) Z/n|."""
    k = len(capped_action)
    d = [[capped_action[i][j] - int(i == j) for j in range(k)] for i in range(k)]
    _, s, _ = smith_form(d)
    order = n
    for i in range(k):
        di = abs(s[i][i])
        order *= math.gcd(di, n) if di else n
    return order


def expected_TH_magnitude(capped_action, n: int) -> float:
    return math.sqrt(homology_order(capped_action, n) / n)


def gauss_delta(q: RootOfUnity) -> acb:
    """Phase of the quadratic Gauss sum: (1/sqrt n) sum_i q^{i^2}."""
    n = q.n
    s = sum((q.power(i * i) for i in range(n)), acb(0))
    return (s / arb(n).sqrt()).mid()


def integer_signature(Q: Sequence[Sequence[int]]) -> int:
    """Signature of a symmetric integer matrix by congruence diagonalization over Q."""
    m = [[Fraction(x) for x in row] for row in Q]
    size = len(m)
    pos = neg = 0
    active = list(range(size))
    while active:
        piv = next((i for i in active if m[i][i] != 0), None)
        if piv is None:
            pair = next(((i, j) for i in active for j in active if i != j and m[i][j] != 0), None)
            if pair is None:
                break
            i, j = pair
            # replace row/col i by i + j to create a nonzero diagonal entry
            for r in range(size):
                m[i][r] += m[j][r]
            for r in range(size):
                m[r][i] += m[r][j]
            if m[i][i] == 0:
                for r in range(size):
                    m[i][r] -= 2 * m[j][r]
                for r in range(size):
                    m[r][i] -= 2 * m[r][j]
            piv = i
        d = m[piv][piv]
        if d > 0:
            pos += 1
        else:
            neg += 1
        active.remove(piv)
        for i in active:
            f = m[i][piv] / d
            if f:
                for r in range(size):
                    m[i][r] -= f * m[piv][r]
                for r in range(size):
                    m[r][i] -= f * m[r][piv]
    return pos - neg


@dataclass
class SurgeryPresentation:
    """Linking matrix Q on colors c = (k_1..k_m, h0_1..h0_g, h1_1..h1_g, l_1..l_p).

    The k colors are summed over Z/n, h0 and h1 index the output and input
    bases, the l colors are puncture weights."""

    Q: list[list[int]]
    signature: int
    genus: int
    num_link: int  # number of summed surgery components k
    num_punctures: int = 0
    name: str = ""

    def __post_init__(self):
        size = self.num_link + 2 * self.genus + self.num_punctures
        if len(self.Q) != size or any(len(r) != size for r in self.Q):
            raise ValueError(f"linking matrix must be {size}x{size}")
        if any(self.Q[i][j] != self.Q[j][i] for i in range(size) for j in range(size)):
            raise ValueError("linking matrix must be symmetric")

    @classmethod
    def from_matrix(cls, Q, genus, num_link, num_punctures=0, name=""):
        return cls([list(r) for r in Q], integer_signature(Q), genus, num_link, num_punctures, name)

    def compose(self, other: "SurgeryPresentation") -> "SurgeryPresentation":
        """Presentation whose Gauss-sum operator is self @ other.

        The input arcs of self are glued to the output arcs of other; each
        glued pair closes up into a new summed component."""
        if self.genus != other.genus or self.num_punctures != other.num_punctures:
            raise ValueError("presentations live on different surfaces")
        g, p = self.genus, self.num_punctures
        m1, m2 = self.num_link, other.num_link
        # new color layout: k(self), k(other), middle, h0(self), h1(other), l
        size = m1 + m2 + g + 2 * g + p
        k1 = list(range(m1))
        k2 = list(range(m1, m1 + m2))
        mid = list(range(m1 + m2, m1 + m2 + g))
        h0 = list(range(m1 + m2 + g, m1 + m2 + 2 * g))
        h1 = list(range(m1 + m2 + 2 * g, m1 + m2 + 3 * g))
        ls = list(range(m1 + m2 + 3 * g, size))
        place1 = k1 + h0 + mid + ls
        place2 = k2 + mid + h1 + ls
        Q = [[0] * size for _ in range(size)]
        for place, src in ((place1, self.Q), (place2, other.Q)):
            for i, pi in enumerate(place):
                for j, pj in enumerate(place):
                    Q[pi][pj] += src[i][j]
        # puncture strands pass through both pieces but are counted once
        for i in ls:
            for j in ls:
                Q[i][j] -= self.Q[i - size + len(self.Q)][j - size + len(self.Q)]
        name = f"{self.name}*{other.name}" if self.name and other.name else ""
        return SurgeryPresentation.from_matrix(Q, g, m1 + m2 + g, p, name)


def surgery_presets() -> dict[str, SurgeryPresentation]:
    """Hand-built diagrams on the closed torus; basis (a, b) of H_1.

    identity: one summed circle linking the bottom and top handle arcs.
    T_a^{+-1}: framing -+1 on both handle arcs.
    T_b^{+-1}: two parallel copies of the identity circle, each framed -+1.
    """
    mats = {
        "identity": ([[0, 1, -1], [1, 0, 0], [-1, 0, 0]], 1),
        "T_a": ([[0, 1, -1], [1, -1, 0], [-1, 0, -1]], 1),
        "T_a^-1": ([[0, 1, -1], [1, 1, 0], [-1, 0, 1]], 1),
        "T_b": ([[-1, 0, 1, -1], [0, -1, 1, -1], [1, 1, 0, 0], [-1, -1, 0, 0]], 2),
        "T_b^-1": ([[1, 0, 1, -1], [0, 1, 1, -1], [1, 1, 0, 0], [-1, -1, 0, 0]], 2),
        # a second diagram for T_b^-1: a Hopf-linked pair of 0-framed circles
        "T_b^-1'": ([[0, -1, 1, -1], [-1, 0, -1, 1], [1, -1, 0, 0], [-1, 1, 0, 0]], 2),
    }
    return {k: SurgeryPresentation.from_matrix(Q, 1, m, name=k) for k, (Q, m) in mats.items()}


SURGERY_ACTIONS = {
    "identity": [],
    "T_a": [([1, 0], 1)],
    "T_a^-1": [([1, 0], -1)],
    "T_b": [([0, 1], 1)],
    "T_b^-1": [([0, 1], -1)],
    "T_b^-1'": [([0, 1], -1)],
}


def gauss_sum_AH(preset: SurgeryPresentation, weights: PunctureWeights | None, q: RootOfUnity) -> DenseMatrix:
    n = q.n
    g = preset.genus
    m = preset.num_link
    Q = preset.Q
    dim = n ** g
    delta = gauss_delta(q)
    pref = (delta ** (-preset.signature) / arb(n ** (g + m)).sqrt()).mid()
    ell = list(weights.exponents) if weights is not None else [0] * preset.num_punctures

    def digits(x):
        ds = []
        for _ in range(g):
            ds.append(x % n)
            x //= n
        return ds[::-1]

    out = DenseMatrix(dim, dim)
    for h1 in range(dim):
        for h0 in range(dim):
            acc = acb(0)
            for kk in range(n ** m):
                c = []
                x = kk
                ks = []
                for _ in range(m):
                    ks.append(x % n)
                    x //= n
                c = ks[::-1] + digits(h0) + digits(h1) + ell[: len(Q) - m - 2 * g]
                e = sum(c[i] * Q[i][j] * c[j] for i in range(len(c)) for j in range(len(c)))
                acc += q.power(e)
            out[h0, h1] = (pref * acc).mid()
    return out


# ---------------------------------------------------------------------------
# the homology torus inside the Kashaev torus


@dataclass
class PerpData:
    basis: list[list[int]]  # vectors of L (rows)
    gram: tuple
    puncture_coords: list[list[int]]  # i(c_v) in the complement basis


def _coordinates(basis: list[list[int]], v: Sequence[int]) -> list[int]:
    mat = [[basis[j][i] for j in range(len(basis))] for i in range(len(v))]
    c = solve_integer(mat, list(v))
    if c is None:
        raise FormIncompatible("vector is not in the span")
    return c


def perp_data(lattice) -> PerpData:
    """Orthogonal complement of the Chekhov-Fock image in L."""
    E = lattice.tri.num_edges
    gens = [[lattice.cfr[r][e] for r in range(lattice.rank)] for e in range(E)]
    basis = orthogonal_complement(lattice.gram, gens)
    gram = tuple(tuple(_pair(lattice.gram, x, y) for y in basis) for x in basis)
    coords = [_coordinates(basis, img) for img in lattice.puncture_images]
    return PerpData(basis, gram, coords)


def perp_monodromy(pd: PerpData, chain: FlipFactorization) -> list[list[int]]:
    """M_N o phi_* restricted to the complement, in the complement basis."""
    f = chain.monodromy_map
    cols = [_coordinates(pd.basis, _apply(f, v)) for v in pd.basis]
    k = len(pd.basis)
    return [[cols[j][i] for j in range(k)] for i in range(k)]


def homology_embedding(lattice, chain: FlipFactorization, hd: HomologyData, bound: int = 3) -> list[list[int]]:
    """Images in L of the homology basis: a unimodular g from H onto the
    complement with g^T G g = 2 form, g(gamma_v) = i(c_v) and g phi_H = f g,
    searched over small combinations of the commutant."""
    pd = perp_data(lattice)
    k = len(pd.basis)
    if k != hd.rank:
        raise FormIncompatible(f"complement has rank {k}, homology has rank {hd.rank}")
    f = perp_monodromy(pd, chain)
    h = hd.action
    rows = []
    for i in range(k):
        for j in range(k):
            r = [0] * (k * k)
            for m in range(k):
                r[i * k + m] += h[m][j]
                r[m * k + j] -= f[i][m]
            rows.append(r)
    ker = integer_kernel(rows)
    target = [[2 * x for x in row] for row in hd.form]
    gram = [list(r) for r in pd.gram]
    for coef in itertools.product(range(-bound, bound + 1), repeat=len(ker)):
        g = [[sum(c * kv[i * k + j] for c, kv in zip(coef, ker)) for j in range(k)] for i in range(k)]
        if abs(int_det(g)) != 1:
            continue
        if int_matmul(int_matmul(int_transpose(g), gram), g) != target:
            continue
        if any(_apply(g, gam) != list(pc) for gam, pc in zip(hd.puncture_classes, pd.puncture_coords)):
            continue
        return [[sum(g[j][i] * pd.basis[j][r] for j in range(k)) for r in range(lattice.rank)] for i in range(k)]
    raise FormIncompatible("no form-compatible identification of homology with the complement")


# ---------------------------------------------------------------------------
# blocks and traces


def determinant(m: DenseMatrix) -> acb:
    return m.det().mid()


@dataclass
class NormalizedTrace:
    dim: int
    trace: acb
    det: acb

    @property
    def value(self) -> acb:
        """tr / det^{1/D} with the principal D-th root (phase defined up to mu_D)."""
        return (self.trace / principal_root(self.det, self.dim)).mid()

    @property
    def magnitude(self) -> float:
        return float(self.magnitude_arb)

    @property
    def magnitude_arb(self) -> arb:
        return (abs(self.trace) / abs(self.det) ** (arb(1) / self.dim)).mid()

    def to_json(self) -> dict:
        v = self.value
        return {
            "magnitude": self.magnitude,
            "magnitude_digits": self.magnitude_arb.str(40, radius=False),
            "phase_representative": [float(v.real), float(v.imag)],
            "ambiguity": f"mu_{self.dim}",
            "dimension": self.dim,
        }


def normalize_and_trace(m: DenseMatrix, det: acb | None = None) -> NormalizedTrace:
    d = det if det is not None else determinant(m)
    if mag(d) == 0:
        raise SingularOperator("operator is singular")
    return NormalizedTrace(m.nrows(), trace(m), d)


def normalized(m: DenseMatrix, det: acb | None = None) -> DenseMatrix:
    d = det if det is not None else determinant(m)
    if mag(d) == 0:
        raise SingularOperator("operator is singular")
    return (m * (1 / principal_root(d, m.nrows()))).mid()


def relative_residual(a: DenseMatrix, b: DenseMatrix) -> tuple[float, acb]:
    """min_s |a - s b| / |a| (Frobenius), with the optimal s."""
    num = acb(0)
    den = arb(0)
    na = arb(0)
    for i in range(a.nrows()):
        for j in range(a.ncols()):
            x, y = a[i, j], b[i, j]
            num += x * y.conjugate()
            den += abs(y) ** 2
            na += abs(x) ** 2
    s = (num / den).mid()
    err = arb(0)
    for i in range(a.nrows()):
        for j in range(a.ncols()):
            err += abs(a[i, j] - s * b[i, j]) ** 2
    return math.sqrt(max(float((err / na).mid()), 0.0)), s


def block_keys(blocks: dict[tuple, list[int]], perm: Sequence[int], n: int) -> dict[tuple, tuple]:
    """zeta -> phi(zeta) on the block keys."""
    if list(blocks) == [()]:
        return {(): ()}
    out = {}
    for key in blocks:
        full = PunctureWeights(key, n) if len(key) == len(perm) else None
        out[key] = tuple(full.permuted(perm).exponents) if full else key
    return out


def block_decompose(m: DenseMatrix, blocks: dict[tuple, list[int]], perm: Sequence[int], n: int,
                    tol: float | None = None) -> dict[tuple, DenseMatrix]:
    """Blocks W_zeta -> W_{phi(zeta)} keyed by the exponents of zeta; raises
    BlockLeakage if mass falls outside the pattern."""
    tol = tol if tol is not None else tolerance(40)
    scale = max(max_abs(m), 1e-300)
    keys = block_keys(blocks, perm, n)
    out = {}
    leak = 0.0
    for key, cols in blocks.items():
        rows = blocks[keys[key]]
        rowset = set(rows)
        for j in cols:
            for i in range(m.nrows()):
                if i not in rowset:
                    leak = max(leak, mag(m[i, j]))
        out[key] = submatrix(m, rows, cols)
    if leak > tol * scale:
        raise BlockLeakage(f"off-pattern mass {leak:.3e}")
    return out


def restricted_operator(g: GPMatrix, idx: Sequence[int]) -> GPMatrix:
    pos = {j: k for k, j in enumerate(idx)}
    perm = []
    scales = []
    for j in idx:
        p = g.perm[j]
        if p not in pos:
            raise BlockLeakage("operator does not preserve the weight space")
        perm.append(pos[p])
        scales.append(g.scales[j])
    return GPMatrix(tuple(perm), tuple(scales))


def block_identification(rep_k: TorusRepresentation, lattice, block: Sequence[int], rep_cf: TorusRepresentation,
                         rep_h: TorusRepresentation, h_vectors: Sequence[Sequence[int]]) -> DenseMatrix:
    """U from the tensor space of the Chekhov-Fock and homology tori onto
    W_zeta, with the restricted Kashaev action equal to U (tensor action) U^{-1}."""
    tensor = tensor_representation(rep_cf, rep_h)
    E = lattice.tri.num_edges

    def target(k):
        v = mat_vec(lattice.cfr, k[:E])
        for c, hv in zip(k[E:], h_vectors):
            if c:
                v = [x + c * y for x, y in zip(v, hv)]
        return restricted_operator(rep_k.monomial(v), block)

    return ladder_intertwiner(tensor, target)


# ---------------------------------------------------------------------------
# bundles


def _block_product(factors: Sequence[DenseMatrix], tail: DenseMatrix) -> DenseMatrix:
    out = tail
    for f in reversed(factors):
        out = (f * out).mid()
    return out


@dataclass
class KashaevBlocks:
    rep: TorusRepresentation
    blocks: dict[tuple, list[int]]  # zeta -> basis indices of W_zeta
    targets: dict[tuple, tuple]  # zeta -> phi(zeta)
    ops: dict[tuple, DenseMatrix]  # zeta -> A^K restricted to W_zeta -> W_{phi zeta}
    dets: dict[tuple, acb]

    @property
    def dim(self) -> int:
        return self.rep.dim

    def block_sign(self) -> int:
        """Sign of the permutation of basis vectors induced by the block pattern."""
        order = []
        for key in self.blocks:
            order.append(key)
        pos = {k: i for i, k in enumerate(order)}
        perm = [pos[self.targets[k]] for k in order]
        sizes = [len(self.blocks[k]) for k in order]
        sign = 1
        for i in range(len(perm)):
            for j in range(i + 1, len(perm)):
                if perm[i] > perm[j] and (sizes[i] * sizes[j]) % 2:
                    sign = -sign
        return sign

    def determinant(self) -> acb:
        d = acb(self.block_sign())
        for v in self.dets.values():
            d *= v
        return d.mid()

    def trace(self) -> acb:
        return sum((trace(m) for k, m in self.ops.items() if self.targets[k] == k), acb(0)).mid()

    def normalized_trace(self) -> NormalizedTrace:
        return NormalizedTrace(self.dim, self.trace(), self.determinant())

    def dense(self) -> DenseMatrix:
        out = DenseMatrix(self.dim, self.dim)
        for key, m in self.ops.items():
            rows, cols = self.blocks[self.targets[key]], self.blocks[key]
            for a, i in enumerate(rows):
                for b, j in enumerate(cols):
                    out[i, j] = m[a, b]
        return out


def compute_A_K_blocks(cert, lift: KashaevCoordinateLift, chain: FlipFactorization, q: RootOfUnity,
                       check_leakage: bool = True) -> KashaevBlocks:
    """A^K assembled block by block: the Psi factors preserve every W_zeta and
    B carries W_zeta to W_{phi zeta}."""
    lat = lift.lattice
    rep = kashaev_representation(lat, chain.initial_scalar, q)
    family = [list(v) for v in lat.puncture_images] if lat.tri.num_punctures > 1 else []
    blocks = weight_block_projectors(rep, family)
    perm = cert.puncture_permutation
    targets = block_keys(blocks, perm, q.n)
    b = monomial_intertwiner(rep, rep, chain.boundary_map())
    bblocks = block_decompose(b, blocks, perm, q.n) if check_leakage else {
        k: submatrix(b, blocks[targets[k]], v) for k, v in blocks.items()}
    factors = {k: [] for k in blocks}
    for step in chain.steps:
        full = psi_factor(rep, step)
        for key, idx in blocks.items():
            factors[key].append(submatrix(full, idx, idx))
    ops = {}
    dets = {}
    for key in blocks:
        ops[key] = _block_product(factors[targets[key]], bblocks[key])
        dets[key] = determinant(ops[key])
    return KashaevBlocks(rep, blocks, targets, ops, dets)


@dataclass
class WeightedOperator:
    weights: PunctureWeights
    target: PunctureWeights
    rep_source: TorusRepresentation
    rep_target: TorusRepresentation
    op: DenseMatrix

    @property
    def invariant(self) -> bool:
        return self.weights == self.target

    def normalized_trace(self) -> NormalizedTrace:
        if not self.invariant:
            raise ValueError("trace requested between distinct weight spaces")
        return normalize_and_trace(self.op)


def weights_for_key(key: tuple, p: int, n: int) -> PunctureWeights:
    return PunctureWeights(key if key else (0,) * p, n)


@dataclass
class IntertwinerBundle:
    q: RootOfUnity
    perm: tuple
    kashaev: KashaevBlocks | None
    cf: dict[tuple, WeightedOperator]
    gl1: dict[tuple, WeightedOperator]
    chain: FlipFactorization
    homology_vectors: list[list[int]] | None
    timings: dict = field(default_factory=dict)


def compute_bundle(cert, sbl: ShearBendLayers, lift: KashaevCoordinateLift, q: RootOfUnity,
                   hd: HomologyData | None = None, invariants: Sequence[str] = ("bb", "blwy", "gl1"),
                   weights: Sequence[PunctureWeights] | None = None) -> IntertwinerBundle:
    timings = {}
    t0 = time.time()
    chain = chain_flip_factorization(cert, sbl, lift, q)
    _timed(timings, "chain", t0)
    p = cert.start.num_punctures
    perm = tuple(cert.puncture_permutation)
    all_w = list(weights) if weights is not None else PunctureWeights.all(p, q.n)
    kb = None
    if "bb" in invariants:
        t0 = time.time()
        kb = compute_A_K_blocks(cert, lift, chain, q)
        _timed(timings, "bb", t0)
    cf = {}
    if "blwy" in invariants:
        t0 = time.time()
        for w in all_w:
            rs, rt, a, _ = compute_A_CF(cert, sbl, lift, w, q)
            cf[w.exponents] = WeightedOperator(w, w.permuted(perm), rs, rt, a)
        _timed(timings, "blwy", t0)
    gl1 = {}
    hv = None
    if "gl1" in invariants and hd is not None:
        t0 = time.time()
        for w in all_w:
            rs, rt, a = compute_A_H(hd, perm, w, q)
            gl1[w.exponents] = WeightedOperator(w, w.permuted(perm), rs, rt, a)
        hv = homology_embedding(lift.lattice, chain, hd)
        _timed(timings, "gl1", t0)
    return IntertwinerBundle(q, perm, kb, cf, gl1, chain, hv, timings)


# ---------------------------------------------------------------------------
# verification


@dataclass
class BlockVerification:
    weights: tuple
    target: tuple
    residual: float
    scalar: acb
    trace_power_defect: float | None
    block_det: acb
    TK_block: acb | None = None  # block trace over the global normalization
    TCF: NormalizedTrace | None = None
    TH: NormalizedTrace | None = None

    def to_json(self) -> dict:
        out = {
            "weights": list(self.weights),
            "target": list(self.target),
            "proportionality_residual": self.residual,
            "trace_power_defect": self.trace_power_defect,
        }
        if self.TCF is not None:
            out["T_CF"] = self.TCF.to_json()
        if self.TH is not None:
            out["T_H"] = self.TH.to_json()
        return out


@dataclass
class VerificationReport:
    blocks: list[BlockVerification]
    det_spread: float
    TK: NormalizedTrace
    generator_residual: float | None = None

    @property
    def max_residual(self) -> float:
        return max(b.residual for b in self.blocks)

    @property
    def max_trace_power_defect(self) -> float:
        vals = [b.trace_power_defect for b in self.blocks if b.trace_power_defect is not None]
        return max(vals) if vals else 0.0

    def passed(self, tol: float = 1e-60) -> bool:
        ok = self.max_residual < tol and self.max_trace_power_defect < tol and self.det_spread < tol
        if self.generator_residual is not None:
            ok = ok and self.generator_residual < tol
        return ok

    def to_json(self) -> dict:
        return {
            "blocks": [b.to_json() for b in self.blocks],
            "max_residual": self.max_residual,
            "max_trace_power_defect": self.max_trace_power_defect,
            "block_det_spread": self.det_spread,
            "generator_residual": self.generator_residual,
            "T_K": self.TK.to_json(),
        }


def _power_traces(m: DenseMatrix, count: int) -> list[arb]:
    out = []
    acc = m
    for k in range(count):
        out.append(abs(trace(acc)))
        if k + 1 < count:
            acc = (acc * m).mid()
    return out


def verify_decomposition(bundle: IntertwinerBundle, lattice, tol: float = 1e-60, strict: bool = True,
                         powers: int | None = None) -> VerificationReport:
    kb = bundle.kashaev
    if kb is None or not bundle.cf or not bundle.gl1 or bundle.homology_vectors is None:
        raise ValueError("verification needs A^K, A^CF and A^H")
    n = bundle.q.n
    p = lattice.tri.num_punctures
    powers = powers if powers is not None else 2 * n
    TK = kb.normalized_trace()
    global_root = principal_root(TK.det, kb.dim)
    results = []
    dets = []
    for key, idx in kb.blocks.items():
        tkey = kb.targets[key]
        w = weights_for_key(key, p, n).exponents
        cf, h = bundle.cf[w], bundle.gl1[w]
        us = block_identification(kb.rep, lattice, idx, cf.rep_source, h.rep_source, bundle.homology_vectors)
        ut = block_identification(kb.rep, lattice, kb.blocks[tkey], cf.rep_target, h.rep_target,
                                  bundle.homology_vectors)
        akz = kb.ops[key]
        predicted = (ut * kron(cf.op, h.op) * inverse(us)).mid()
        res, s = relative_residual(akz, predicted)
        defect = None
        tcf = th = tk = None
        if tkey == key:
            dets.append(kb.dets[key])
            tcf, th = cf.normalized_trace(), h.normalized_trace()
            tk = (trace(akz) / global_root).mid()
            a_pow = _power_traces(normalized(akz, kb.dets[key]), powers)
            c_pow = _power_traces(normalized(cf.op), powers)
            h_pow = _power_traces(normalized(h.op), powers)
            defect = 0.0
            for a, c, hh in zip(a_pow, c_pow, h_pow):
                ref = max(float(a), 1.0)
                defect = max(defect, float(abs(a - c * hh)) / ref)
        results.append(BlockVerification(key, tkey, res, s, defect, kb.dets[key], tk, tcf, th))
    spread = 0.0
    if dets:
        ref = dets[0]
        for d in dets[1:]:
            spread = max(spread, mag(d / ref - 1))
    report = VerificationReport(results, spread, TK)
    if strict and not report.passed(tol):
        raise VerificationFailed(
            f"residual {report.max_residual:.3e}, trace powers {report.max_trace_power_defect:.3e}, "
            f"determinant spread {report.det_spread:.3e}")
    return report


# ---------------------------------------------------------------------------
# independent route: the coordinate change applied generator by generator


def _side_operator(rep: TorusRepresentation, tri, label: int) -> DenseMatrix:
    return rep.monomial(side_vector(tri, label)).dense()


def generator_route_residual(cert, rep: TorusRepresentation, A: DenseMatrix, q: RootOfUnity) -> float:
    """max_s |rho(Theta(phi_* x_s)) A - A rho(x_s)| / |A|, with Theta composed
    flip by flip from the generator formulas (no factorization involved)."""
    tris = cert.triangulations
    dim = rep.dim
    one = identity(dim)
    ops = {}
    for face in tris[0].faces:
        for lab in face:
            ops[lab] = _side_operator(rep, tris[0], lab)
    qv, qi = q.power(1), q.power(-1)
    for before, after, fr in zip(tris, tris[1:], cert.frames):
        gram = kashaev_lattice(before).gram
        chi_e = [x + y for x, y in zip(side_vector(before, fr.e1), side_vector(before, fr.e2))]
        xe = (ops[fr.e1] * ops[fr.e2]).mid()
        plus = (one + xe * qv).mid()
        minus_inv = inverse((one + xe * qi).mid())
        new = {}
        for face in after.faces:
            for lab in face:
                if lab in (fr.a, fr.c):
                    new[lab] = (ops[lab] * plus).mid()
                elif lab in (fr.b, fr.d):
                    w = _pair(gram, side_vector(before, lab), chi_e)
                    weyl = (ops[lab] * xe * q.power(-w)).mid()
                    new[lab] = (weyl * minus_inv).mid()
                elif lab == fr.e1_new:
                    new[lab] = (ops[fr.b] * ops[fr.c]).mid()
                elif lab == fr.e2_new:
                    new[lab] = (ops[fr.a] * ops[fr.d]).mid()
                else:
                    new[lab] = ops[lab]
        ops = new
    inverse_iso = {v: k for k, v in cert.isometry.items()}
    scale = max(max_abs(A), 1e-300)
    worst = 0.0
    for face in tris[0].faces:
        for lab in face:
            lhs = (ops[inverse_iso[lab]] * A).mid()
            rhs = (A * _side_operator(rep, tris[0], lab)).mid()
            worst = max(worst, max_abs((lhs - rhs).mid()) / scale)
    return worst
