"""Quantum tori at odd roots of unity and their irreducible representations.

A lattice with integer skew form is brought to a symplectic normal form
``(+) d_i J_2 (+) 0``; the representation on ``V^{(x) r}`` sends ``x^{alpha_i}``
to a clock ``S^{d_i}`` and ``x^{beta_i}`` to the shift ``T`` on the i-th factor,
rescaled by a scalar map.  Every monomial then acts by a generalized
permutation matrix, which is what keeps the large Kashaev representations
tractable.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import flint

from .numeric import (
    DenseMatrix,
    GPMatrix,
    RootOfUnity,
    acb,
    int_identity,
    int_inverse,
    int_matmul,
    int_transpose,
    mag,
    smith_form,
    to_acb,
    tolerance,
)


class CentralMonomial(ValueError):
    pass


class MissingRootValue(ValueError):
    pass


class CentralCharacterMismatch(ValueError):
    pass


class NonDiagonalAction(ValueError):
    pass


def _form(gram, x, y) -> int:
    total = 0
    for i, xi in enumerate(x):
        if xi:
            row = gram[i]
            for j, yj in enumerate(y):
                if yj:
                    total += xi * row[j] * yj
    return total


@dataclass(frozen=True)
class SkewLattice:
    gram: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        g = tuple(tuple(int(x) for x in row) for row in self.gram)
        object.__setattr__(self, "gram", g)
        k = len(g)
        if any(len(row) != k for row in g):
            raise ValueError("gram matrix must be square")
        if any(g[i][j] != -g[j][i] for i in range(k) for j in range(k)):
            raise ValueError("gram matrix must be skew-symmetric")

    @property
    def rank(self) -> int:
        return len(self.gram)

    def omega(self, x, y) -> int:
        return _form(self.gram, x, y)

    def pairing_row(self, x) -> list[int]:
        """omega(x, e_j) for all j."""
        return [sum(x[i] * self.gram[i][j] for i in range(self.rank) if x[i]) for j in range(self.rank)]

    @classmethod
    def direct_sum(cls, a: "SkewLattice", b: "SkewLattice") -> "SkewLattice":
        ka, kb = a.rank, b.rank
        g = [[0] * (ka + kb) for _ in range(ka + kb)]
        for i in range(ka):
            for j in range(ka):
                g[i][j] = a.gram[i][j]
        for i in range(kb):
            for j in range(kb):
                g[ka + i][ka + j] = b.gram[i][j]
        return cls(tuple(map(tuple, g)))


@dataclass(frozen=True)
class SymplecticBasis:
    """Columns of ``change`` are alpha_1, beta_1, ..., alpha_r, beta_r, gamma_1, ..."""

    change: tuple[tuple[int, ...], ...]
    blocks: tuple[int, ...]
    radical_rank: int

    @cached_property
    def inverse(self) -> list[list[int]]:
        return int_inverse([list(r) for r in self.change])

    def vector(self, j: int) -> list[int]:
        return [row[j] for row in self.change]

    def alpha(self, i: int) -> list[int]:
        return self.vector(2 * i)

    def beta(self, i: int) -> list[int]:
        return self.vector(2 * i + 1)

    def gammas(self) -> list[list[int]]:
        r = len(self.blocks)
        return [self.vector(2 * r + j) for j in range(self.radical_rank)]

    def coordinates(self, k) -> list[int]:
        inv = self.inverse
        return [sum(inv[i][j] * k[j] for j in range(len(k)) if k[j]) for i in range(len(inv))]


def _reduce_pairs(gram, vectors: list[list[int]]):
    """Symplectic reduction of a list of spanning vectors; returns (pairs, radical)."""
    om = lambda x, y: _form(gram, x, y)
    add = lambda x, y, c=1: [a + c * b for a, b in zip(x, y)]
    rest = [list(v) for v in vectors]
    pairs = []
    while True:
        best = None
        for i in range(len(rest)):
            for j in range(i + 1, len(rest)):
                w = om(rest[i], rest[j])
                if w and (best is None or abs(w) < best[0]):
                    best = (abs(w), i, j)
        if best is None:
            break
        _, i, j = best
        u, v = rest[i], rest[j]
        if om(u, v) < 0:
            v = [-x for x in v]
        d = om(u, v)
        others = [rest[k] for k in range(len(rest)) if k not in (i, j)]
        cleared = []
        restart = False
        for idx, w in enumerate(others):
            a, b = om(u, w), om(v, w)
            if a % d or b % d:
                w2 = add(add(w, v, -(a // d)), u, b // d)
                rest = [u, v] + others[:idx] + [w2] + others[idx + 1:]
                restart = True
                break
            cleared.append(add(add(w, u, b // d), v, -(a // d)))
        if restart:
            continue
        bad = None
        for x in range(len(cleared)):
            for y in range(x + 1, len(cleared)):
                if om(cleared[x], cleared[y]) % d:
                    bad = x
                    break
            if bad is not None:
                break
        if bad is not None:
            rest = [add(u, cleared[bad]), v] + cleared
            continue
        pairs.append((u, v, d))
        rest = cleared
    return pairs, rest


def _summand_basis(vectors: list[list[int]], dim: int) -> list[list[int]]:
    """Basis of the lattice spanned by ``vectors`` (assumed saturated)."""
    if not vectors:
        return []
    u, d, v = smith_form(vectors)
    r = sum(1 for i in range(min(len(d), dim)) if d[i][i])
    if any(d[i][i] != 1 for i in range(r)):
        raise ValueError("spanned sublattice is not saturated")
    vinv = int_inverse(v)
    return [vinv[i] for i in range(r)]


def skew_normal_form(lattice: SkewLattice, isotropic: Sequence[Sequence[int]] | None = None) -> SymplecticBasis:
    """Unimodular change of basis to ``(+) d_i J_2 (+) 0``.

    With ``isotropic`` vectors p_1..p_m (spanning an isotropic direct summand
    in the non-degenerate part), these become the last m alphas, each paired
    with a dual beta at d = 1.
    """
    gram = lattice.gram
    k = lattice.rank
    iso = [list(p) for p in (isotropic or [])]
    duals = []
    if iso:
        from .numeric import solve_integer

        rows = [lattice.pairing_row(p) for p in iso]
        for v in range(len(iso)):
            b = solve_integer(rows, [int(v == w) for w in range(len(iso))])
            if b is None:
                raise NonDiagonalAction("isotropic family has no integral dual")
            duals.append(b)
        for v in range(len(iso)):
            for w in range(v + 1, len(iso)):
                x = _form(gram, duals[v], duals[w])
                if x:
                    duals[w] = [bw + x * pv for bw, pv in zip(duals[w], iso[v])]
        for v in range(len(iso)):
            for w in range(len(iso)):
                if _form(gram, iso[v], iso[w]) or _form(gram, iso[v], duals[w]) != int(v == w):
                    raise NonDiagonalAction("family is not isotropic")

        def project(x):
            out = list(x)
            for p, b in zip(iso, duals):
                xb = _form(gram, x, b)
                xp = _form(gram, x, p)
                out = [o - xb * pi + xp * bi for o, pi, bi in zip(out, p, b)]
            return out

        spanning = _summand_basis([project(e) for e in int_identity(k)], k)
    else:
        spanning = int_identity(k)
    pairs, radical = _reduce_pairs(gram, spanning)
    pairs = pairs[::-1]
    radical = _summand_basis(radical, k) if radical else []
    cols = []
    blocks = []
    for u, v, d in pairs:
        cols += [u, v]
        blocks.append(d)
    for p, b in zip(iso, duals):
        cols += [p, b]
        blocks.append(1)
    cols += radical
    change = [[cols[j][i] for j in range(len(cols))] for i in range(k)]
    if len(cols) != k:
        raise ValueError("symplectic reduction lost rank")
    basis = SymplecticBasis(tuple(map(tuple, change)), tuple(blocks), len(radical))
    _check_normal_form(lattice, basis)
    return basis


def _check_normal_form(lattice: SkewLattice, basis: SymplecticBasis) -> None:
    c = [list(r) for r in basis.change]
    g = int_matmul(int_matmul(int_transpose(c), [list(r) for r in lattice.gram]), c)
    k = lattice.rank
    expect = [[0] * k for _ in range(k)]
    for i, d in enumerate(basis.blocks):
        expect[2 * i][2 * i + 1] = d
        expect[2 * i + 1][2 * i] = -d
    if g != expect:
        raise ValueError("skew normal form check failed")
    basis.inverse  # raises if not unimodular


# ---------------------------------------------------------------------------
# scalar maps and representations


@dataclass(frozen=True)
class ScalarMap:
    """Homomorphism L -> C^x given by its values on the standard basis."""

    values: tuple

    def __post_init__(self):
        vals = tuple(to_acb(v) for v in self.values)
        if any(v.is_zero() for v in vals):
            raise ValueError("scalar map values must be nonzero")
        object.__setattr__(self, "values", vals)

    def __call__(self, k) -> acb:
        out = acb(1)
        for v, e in zip(self.values, k):
            if e:
                out *= v ** int(e)
        return out.mid()

    def compose(self, f) -> "ScalarMap":
        """k -> self(f k) for an integer matrix f given by columns."""
        cols = len(f[0]) if f else 0
        return ScalarMap(tuple(self([row[j] for row in f]) for j in range(cols)))

    def times(self, other: "ScalarMap") -> "ScalarMap":
        return ScalarMap(tuple((a * b).mid() for a, b in zip(self.values, other.values)))

    @classmethod
    def ones(cls, rank: int) -> "ScalarMap":
        return cls(tuple(acb(1) for _ in range(rank)))


class TorusRepresentation:
    """Irreducible representation of T_q(L) on (C^n)^{(x) r}."""

    def __init__(self, lattice: SkewLattice, q: RootOfUnity, scalar: ScalarMap,
                 basis: SymplecticBasis | None = None):
        if len(scalar.values) != lattice.rank:
            raise ValueError("scalar map rank does not match the lattice")
        self.lattice = lattice
        self.q = q
        self.scalar = scalar
        self.basis = basis if basis is not None else skew_normal_form(lattice)
        n = q.n
        for d in self.basis.blocks:
            if flint.fmpz(d).gcd(n) != 1:
                raise ValueError(f"block {d} not invertible modulo {n}")
        self.n = n
        self.r = len(self.basis.blocks)
        self.dim = n ** self.r
        self._qpow = q.powers(n)
        self._digits = None

    @property
    def digits(self) -> list[tuple[int, ...]]:
        if self._digits is None:
            n, r = self.n, self.r
            out = []
            for idx in range(self.dim):
                ds = []
                x = idx
                for _ in range(r):
                    ds.append(x % n)
                    x //= n
                out.append(tuple(reversed(ds)))
            self._digits = out
        return self._digits

    def index(self, digits: Sequence[int]) -> int:
        idx = 0
        for d in digits:
            idx = idx * self.n + (d % self.n)
        return idx

    def qpow(self, m: int) -> acb:
        return self._qpow[m % self.n]

    def monomial_data(self, k) -> tuple[acb, list[int], list[int], int]:
        """(scalar, clock exponents d_i a_i, shifts b_i, constant q-exponent)."""
        coords = self.basis.coordinates(k)
        clocks = []
        shifts = []
        const = 0
        for i, d in enumerate(self.basis.blocks):
            a, b = coords[2 * i], coords[2 * i + 1]
            clocks.append(d * a)
            shifts.append(b)
            const -= d * a * b
        return self.scalar(k), clocks, shifts, const

    def monomial(self, k) -> GPMatrix:
        """Image of the Weyl-ordered monomial x^k."""
        s, clocks, shifts, const = self.monomial_data(k)
        n = self.n
        perm = []
        scales = []
        cache = {}
        for ds in self.digits:
            expo = const
            tgt = 0
            for c, b, j in zip(clocks, shifts, ds):
                expo += 2 * c * (j + b)
                tgt = tgt * n + (j + b) % n
            perm.append(tgt)
            e = expo % n
            if e not in cache:
                cache[e] = (s * self._qpow[e]).mid()
            scales.append(cache[e])
        return GPMatrix(tuple(perm), tuple(scales))

    def is_central(self, k) -> bool:
        row = self.lattice.pairing_row(k)
        return all(x % self.n == 0 for x in row)

    def sigma(self, k) -> acb:
        return (self.scalar(k) ** self.n).mid()


def rep_monomial(rep: TorusRepresentation, k) -> GPMatrix:
    return rep.monomial(k)


def monomial_eigendata(rep: TorusRepresentation, k) -> tuple[list[acb], int, dict]:
    """Eigenvalues of x^k (n-th roots of sigma(k)), their common multiplicity,
    and eigenvectors built from the permutation cycles.

    Returns (eigenvalues, multiplicity, vectors) where vectors maps the index
    j of the eigenvalue y q^{2j} to a list of sparse vectors {index: value}.
    """
    if rep.is_central(k):
        raise CentralMonomial(f"monomial {list(k)} is central")
    g = rep.monomial(k)
    n = rep.n
    sigma = rep.sigma(k)
    y = principal_root_of(sigma, n)
    roots = [(y * rep.qpow(2 * j)).mid() for j in range(n)]
    vectors: dict[int, list[dict[int, acb]]] = {j: [] for j in range(n)}
    for cyc in g.cycles():
        length = len(cyc)
        # walking the cycle: g e_{c_t} = s_t e_{c_{t+1}}; lambda over the cycle
        prod = acb(1)
        for c in cyc:
            prod *= g.scales[c]
        # eigenvalues on this cycle: lambda with lambda^length = prod
        for j in range(n):
            lam = roots[j]
            if mag(lam ** length - prod) > tolerance(40) * max(1.0, mag(prod)):
                continue
            # v = sum_t w_t e_{c_t}, with w_{t+1} = s_t w_t / lam
            w = acb(1)
            vec = {}
            for t, c in enumerate(cyc):
                vec[c] = w
                w = (w * g.scales[c] / lam).mid()
            vectors[j].append(vec)
    mult = rep.dim // n
    return roots, mult, vectors


def principal_root_of(x: acb, n: int) -> acb:
    return (to_acb(x).log() / n).exp().mid()


def _interpolation_coefficients(y: acb, values: Sequence[acb], rep_q: Callable[[int], acb], n: int) -> list[acb]:
    """f_m with sum_m f_m (y q^{2k})^m = values[k]."""
    out = []
    yinv = 1 / y
    for m in range(n):
        acc = acb(0)
        for k in range(n):
            acc += values[k] * rep_q(-2 * k * m)
        out.append((acc * yinv ** m / n).mid())
    return out


def functional_calculus(rep: TorusRepresentation, k, values_on_roots, base_root: acb | None = None,
                        scale: acb | None = None) -> DenseMatrix:
    """f(c x^k) for the degree < n interpolant f of the given values.

    ``values_on_roots`` is either a sequence indexed by j (value at
    y q^{2j}) or a callable on the roots.  ``scale`` multiplies the monomial.
    """
    if rep.is_central(k):
        raise CentralMonomial(f"monomial {list(k)} is central")
    g = rep.monomial(k)
    if scale is not None:
        g = g.times_scalar(scale)
    return functional_calculus_gp(g, rep.n, rep.qpow, values_on_roots, base_root)


def functional_calculus_gp(g: GPMatrix, n: int, qpow: Callable[[int], acb], values_on_roots,
                           base_root: acb | None = None) -> DenseMatrix:
    gn = g.power(n)
    t = gn.scales[0]
    if not gn.is_diagonal() or any(mag(s - t) > tolerance(30) * max(1.0, mag(t)) for s in gn.scales):
        raise CentralCharacterMismatch("n-th power of the operator is not scalar")
    y = base_root if base_root is not None else principal_root_of(t, n)
    if mag(y ** n - t) > tolerance(30) * max(1.0, mag(t)):
        raise MissingRootValue("base root is not an n-th root of the n-th power")
    roots = [(y * qpow(2 * j)).mid() for j in range(n)]
    if callable(values_on_roots):
        values = [to_acb(values_on_roots(x)) for x in roots]
    else:
        values = [to_acb(v) for v in values_on_roots]
        if len(values) != n:
            raise MissingRootValue(f"expected {n} values, got {len(values)}")
    coeffs = _interpolation_coefficients(y, values, qpow, n)
    dim = g.dim
    out = DenseMatrix(dim, dim)
    power = GPMatrix.identity(dim)
    acc: dict[tuple[int, int], acb] = {}
    for m in range(n):
        c = coeffs[m]
        if not c.is_zero():
            for j, (p, s) in enumerate(zip(power.perm, power.scales)):
                key = (p, j)
                acc[key] = acc.get(key, acb(0)) + c * s
        power = g @ power
    for (i, j), v in acc.items():
        out[i, j] = v.mid()
    return out


# ---------------------------------------------------------------------------
# intertwiners


@dataclass(frozen=True)
class MonomialMap:
    """f_{s s'}: T(L') -> T(L), x'^k -> s'(k)/s(f k) x^{f k}; f is given by columns."""

    matrix: tuple[tuple[int, ...], ...]
    source_scalar: ScalarMap
    target_scalar: ScalarMap

    def image(self, k) -> list[int]:
        return [sum(row[j] * k[j] for j in range(len(k)) if k[j]) for row in self.matrix]

    def coefficient(self, k) -> acb:
        return (self.source_scalar(k) / self.target_scalar(self.image(k))).mid()

    def check_form(self, source: SkewLattice, target: SkewLattice) -> bool:
        f = [list(r) for r in self.matrix]
        g = int_matmul(int_matmul(int_transpose(f), [list(r) for r in target.gram]), f)
        return g == [list(r) for r in source.gram]


def ladder_intertwiner(source: TorusRepresentation, target_op: Callable[[list[int]], GPMatrix],
                       check: bool = True) -> DenseMatrix:
    """B with source(x) = B^{-1} target(x) B, for target given on lattice vectors
    of the source lattice.  Columns are the simultaneous eigenvector of the
    alpha-images followed by the ladder of beta-images; unit columns, first
    nonzero entry of column 0 positive real."""
    basis = source.basis
    n = source.n
    dim = source.dim
    r = source.r
    tol = tolerance(40)
    for gvec in basis.gammas():
        op = target_op(gvec)
        want = source.scalar(gvec)
        if op.dim != dim or not op.is_diagonal() or any(mag(s - want) > tol * max(1.0, mag(want)) for s in op.scales):
            raise CentralCharacterMismatch(f"radical vector {gvec} acts by a different scalar")
    alphas = [target_op(basis.alpha(i)) for i in range(r)]
    lams = [source.scalar(basis.alpha(i)) for i in range(r)]
    betas = []
    for i in range(r):
        b = target_op(basis.beta(i))
        betas.append(b.times_scalar(1 / source.scalar(basis.beta(i))))
    v0 = None
    for start in range(dim):
        vec = {start: acb(1)}
        for op, lam in zip(alphas, lams):
            vec = _project_eigen(op, lam, vec, n)
            if not vec:
                break
        if vec:
            norm2 = sum((abs(x) ** 2 for x in vec.values()), flint.arb(0))
            if float(norm2.mid()) > 1e-20:
                v0 = vec
                break
    if v0 is None:
        raise CentralCharacterMismatch("no simultaneous eigenvector with the required eigenvalues")
    norm2 = sum((abs(x) ** 2 for x in v0.values()), flint.arb(0))
    first = min(v0)
    ph = v0[first] / abs(v0[first])
    fac = (1 / (ph * norm2.sqrt())).mid()
    col0 = [acb(0)] * dim
    for i, x in v0.items():
        col0[i] = (x * fac).mid()
    cols = [None] * dim
    cols[0] = col0
    digits = source.digits
    for idx in range(1, dim):
        ds = digits[idx]
        i = max(t for t in range(r) if ds[t])
        prev = list(ds)
        prev[i] -= 1
        cols[idx] = betas[i].apply(cols[source.index(prev)])
    out = DenseMatrix(dim, dim)
    for j, col in enumerate(cols):
        for i, x in enumerate(col):
            if not x.is_zero():
                out[i, j] = x
    if check:
        # closing the ladder: beta^n applied to column 0 must return it
        for i in range(r):
            ds = [0] * r
            ds[i] = n - 1
            back = betas[i].apply(cols[source.index(ds)])
            err = max(mag(a - b) for a, b in zip(back, col0))
            if err > tol:
                raise CentralCharacterMismatch(f"ladder along beta_{i} does not close (residual {err:.3e})")
    return out


def _project_eigen(op: GPMatrix, lam: acb, vec: dict, n: int) -> dict:
    """Apply (1/n) sum_m (op/lam)^m to a sparse vector."""
    inv = 1 / lam
    acc: dict[int, acb] = {}
    cur = dict(vec)
    for m in range(n):
        for i, x in cur.items():
            acc[i] = acc.get(i, acb(0)) + x
        nxt = {}
        for i, x in cur.items():
            nxt[op.perm[i]] = (op.scales[i] * x * inv).mid()
        cur = nxt
    out = {}
    for i, x in acc.items():
        x = (x / n).mid()
        if mag(x) > 1e-30:
            out[i] = x
    return out


def monomial_intertwiner(rep_source: TorusRepresentation, rep_target: TorusRepresentation,
                         fmap: MonomialMap) -> DenseMatrix:
    """B with rep_source(x) = B^{-1} rep_target(f(x)) B."""
    if rep_source.dim != rep_target.dim:
        raise CentralCharacterMismatch("representations have different dimensions")

    def target_op(k):
        return rep_target.monomial(fmap.image(k)).times_scalar(fmap.coefficient(k))

    return ladder_intertwiner(rep_source, target_op)


def intertwine_reps(rep_a: TorusRepresentation, rep_b: TorusRepresentation) -> DenseMatrix:
    """U with rep_a(x) = U^{-1} rep_b(x) U on a common lattice."""
    if rep_a.lattice.gram != rep_b.lattice.gram:
        raise CentralCharacterMismatch("representations of different lattices")
    return ladder_intertwiner(rep_a, rep_b.monomial)


def weight_block_projectors(rep: TorusRepresentation, family: Sequence[Sequence[int]]) -> dict[tuple[int, ...], list[int]]:
    """Partition of the standard basis into simultaneous eigenspaces of the
    family; keys are exponents l with eigenvalue q^l (or the raw index of the
    eigenvalue relative to the scalar when it is not a root of unity)."""
    if not family:
        return {(): list(range(rep.dim))}
    ops = [rep.monomial(k) for k in family]
    for op in ops:
        if not op.is_diagonal():
            raise NonDiagonalAction("family does not act diagonally in the adapted basis")
    n = rep.n
    qp = [rep.qpow(m) for m in range(n)]
    tol = tolerance(40)

    def exponent(x: acb) -> int:
        for m in range(n):
            if mag(x - qp[m]) < tol:
                return m
        raise NonDiagonalAction("eigenvalue is not a power of q")

    blocks: dict[tuple[int, ...], list[int]] = {}
    for idx in range(rep.dim):
        key = tuple(exponent(op.scales[idx]) for op in ops)
        blocks.setdefault(key, []).append(idx)
    return dict(sorted(blocks.items()))


def tensor_representation(a: TorusRepresentation, b: TorusRepresentation) -> TorusRepresentation:
    """Representation of the direct-sum lattice on the tensor product (a first)."""
    if a.q != b.q:
        raise ValueError("different roots of unity")
    lat = SkewLattice.direct_sum(a.lattice, b.lattice)
    ka, kb = a.lattice.rank, b.lattice.rank
    ca, cb = a.basis, b.basis
    ra, rb = len(ca.blocks), len(cb.blocks)

    def col(basis, j, offset, total):
        v = [0] * total
        for i in range(len(basis.change)):
            v[offset + i] = basis.change[i][j]
        return v

    total = ka + kb
    cols = []
    for i in range(ra):
        cols += [col(ca, 2 * i, 0, total), col(ca, 2 * i + 1, 0, total)]
    for i in range(rb):
        cols += [col(cb, 2 * i, ka, total), col(cb, 2 * i + 1, ka, total)]
    for j in range(ca.radical_rank):
        cols.append(col(ca, 2 * ra + j, 0, total))
    for j in range(cb.radical_rank):
        cols.append(col(cb, 2 * rb + j, ka, total))
    change = tuple(tuple(cols[j][i] for j in range(total)) for i in range(total))
    basis = SymplecticBasis(change, ca.blocks + cb.blocks, ca.radical_rank + cb.radical_rank)
    _check_normal_form(lat, basis)
    scalar = ScalarMap(a.scalar.values + b.scalar.values)
    return TorusRepresentation(lat, a.q, scalar, basis)
