"""Arbitrary-precision scalars, generalized permutation matrices and small
integer linear algebra.

Scalars are ``flint.acb`` balls; we only ever use their midpoints, so every
routine that returns a number strips the radius.  Dense matrices are
``flint.acb_mat``.  The working precision is global (``flint.ctx.prec``).
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import flint

acb = flint.acb
arb = flint.arb
DenseMatrix = flint.acb_mat

DEFAULT_PRECISION = 256
DEFAULT_SLACK = 20

flint.ctx.prec = DEFAULT_PRECISION


class DimensionMismatch(ValueError):
    pass


def get_precision() -> int:
    return flint.ctx.prec


def set_precision(bits: int) -> None:
    if bits < 64:
        raise ValueError(f"precision must be at least 64 bits, got {bits}")
    flint.ctx.prec = int(bits)


@contextlib.contextmanager
def working_precision(bits: int):
    old = flint.ctx.prec
    set_precision(bits)
    try:
        yield
    finally:
        flint.ctx.prec = old


_EXTRA_SLACK = 0


def tolerance(slack: int = DEFAULT_SLACK) -> float:
    """``2**(-precision + slack)`` as a float (fine down to ~1e-300)."""
    return 2.0 ** (-get_precision() + slack + _EXTRA_SLACK)


@contextlib.contextmanager
def relaxed_checks(bits: int):
    """Loosen every internal consistency check by ``bits``.

    Only meant for negative controls, where slightly wrong input has to get
    all the way to the final residuals instead of being stopped early."""
    global _EXTRA_SLACK
    old = _EXTRA_SLACK
    _EXTRA_SLACK = old + int(bits)
    try:
        yield
    finally:
        _EXTRA_SLACK = old


def to_acb(x) -> acb:
    if isinstance(x, acb):
        return x.mid()
    if isinstance(x, arb):
        return acb(x.mid())
    if isinstance(x, complex):
        return acb(x.real, x.imag)
    if isinstance(x, Fraction):
        return acb(arb(x.numerator) / x.denominator)
    if isinstance(x, str):
        return acb(arb(x))
    return acb(x)


def parse_complex(re: str, im: str = "0") -> acb:
    return acb(arb(re), arb(im))


def mag(x) -> float:
    """Absolute value of the midpoint as a float."""
    return float(abs(to_acb(x)).mid())


def to_complex(x) -> complex:
    x = to_acb(x)
    return complex(float(x.real.mid()), float(x.imag.mid()))


def exp_2pi_i(r: Fraction) -> acb:
    """``exp(2*pi*i*r)`` for rational r, exact up to rounding."""
    r = Fraction(r) % 1
    return acb(arb(2 * r.numerator) / r.denominator).exp_pi_i() if r else acb(1)


def fmt(x, digits: int = 20) -> str:
    x = to_acb(x)
    re = x.real.mid().str(digits, radius=False)
    im = x.imag.mid().str(digits, radius=False)
    return f"{re} + {im}j" if not im.startswith("-") else f"{re} - {im[1:]}j"


@dataclass(frozen=True)
class RootOfUnity:
    """q = exp(2 pi i k / n) with n odd."""

    n: int
    k: int = 1

    def __post_init__(self):
        if self.n < 3 or self.n % 2 == 0:
            raise ValueError(f"order must be odd and >= 3, got {self.n}")

    @property
    def value(self) -> acb:
        return self.power(1)

    def power(self, j: int) -> acb:
        return exp_2pi_i(Fraction(self.k * j, self.n))

    def powers(self, count: int | None = None) -> list[acb]:
        count = self.n if count is None else count
        return [self.power(j) for j in range(count)]

    def half_power(self, j: int) -> acb:
        """q^(j/2), defined through the branch q^(1/2) = exp(pi i k / n)."""
        return exp_2pi_i(Fraction(self.k * j, 2 * self.n))


# ---------------------------------------------------------------------------
# generalized permutation matrices


@dataclass(frozen=True)
class GPMatrix:
    """Matrix sending e_j to scales[j] * e_{perm[j]}."""

    perm: tuple[int, ...]
    scales: tuple[acb, ...]

    @property
    def dim(self) -> int:
        return len(self.perm)

    @classmethod
    def identity(cls, dim: int) -> "GPMatrix":
        return cls(tuple(range(dim)), tuple(acb(1) for _ in range(dim)))

    @classmethod
    def scalar(cls, dim: int, c) -> "GPMatrix":
        c = to_acb(c)
        return cls(tuple(range(dim)), tuple(c for _ in range(dim)))

    def compose(self, other: "GPMatrix") -> "GPMatrix":
        """self @ other, in O(dim)."""
        if self.dim != other.dim:
            raise DimensionMismatch(f"{self.dim} != {other.dim}")
        perm = tuple(self.perm[p] for p in other.perm)
        scales = tuple(
            (s * self.scales[p]).mid() for s, p in zip(other.scales, other.perm)
        )
        return GPMatrix(perm, scales)

    __matmul__ = compose

    def times_scalar(self, c) -> "GPMatrix":
        c = to_acb(c)
        return GPMatrix(self.perm, tuple((s * c).mid() for s in self.scales))

    def power(self, m: int) -> "GPMatrix":
        if m < 0:
            return self.inverse().power(-m)
        result = GPMatrix.identity(self.dim)
        base = self
        while m:
            if m & 1:
                result = result @ base
            base = base @ base
            m >>= 1
        return result

    def inverse(self) -> "GPMatrix":
        perm = [0] * self.dim
        scales = [acb(0)] * self.dim
        for j, (p, s) in enumerate(zip(self.perm, self.scales)):
            perm[p] = j
            scales[p] = (1 / s).mid()
        return GPMatrix(tuple(perm), tuple(scales))

    def dense(self) -> DenseMatrix:
        m = DenseMatrix(self.dim, self.dim)
        for j, (p, s) in enumerate(zip(self.perm, self.scales)):
            m[p, j] = s
        return m

    def apply(self, v: Sequence[acb]) -> list[acb]:
        out = [acb(0)] * self.dim
        for j, (p, s) in enumerate(zip(self.perm, self.scales)):
            out[p] = (s * v[j]).mid()
        return out

    def entry(self, i: int, j: int) -> acb:
        return self.scales[j] if self.perm[j] == i else acb(0)

    def diagonal(self) -> list[acb]:
        return [s if p == j else acb(0) for j, (p, s) in enumerate(zip(self.perm, self.scales))]

    def trace(self) -> acb:
        return sum(self.diagonal(), acb(0)).mid()

    def det(self) -> acb:
        d = acb(1)
        for s in self.scales:
            d *= s
        return (permutation_sign(self.perm) * d).mid()

    def cycles(self) -> list[list[int]]:
        seen = [False] * self.dim
        out = []
        for start in range(self.dim):
            if seen[start]:
                continue
            cyc = []
            j = start
            while not seen[j]:
                seen[j] = True
                cyc.append(j)
                j = self.perm[j]
            out.append(cyc)
        return out

    def is_diagonal(self) -> bool:
        return all(p == j for j, p in enumerate(self.perm))


def gp_compose(a: GPMatrix, b: GPMatrix) -> GPMatrix:
    return a.compose(b)


def gp_kron(a: GPMatrix, b: GPMatrix) -> GPMatrix:
    """Kronecker product, index (i, j) -> i * b.dim + j."""
    nb = b.dim
    perm = []
    scales = []
    for i in range(a.dim):
        for j in range(nb):
            perm.append(a.perm[i] * nb + b.perm[j])
            scales.append((a.scales[i] * b.scales[j]).mid())
    return GPMatrix(tuple(perm), tuple(scales))


def permutation_sign(perm: Sequence[int]) -> int:
    seen = [False] * len(perm)
    sign = 1
    for start in range(len(perm)):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


# ---------------------------------------------------------------------------
# dense helpers


def identity(dim: int) -> DenseMatrix:
    m = DenseMatrix(dim, dim)
    for i in range(dim):
        m[i, i] = acb(1)
    return m


def dense_from_rows(rows: Iterable[Iterable]) -> DenseMatrix:
    rows = [[to_acb(x) for x in row] for row in rows]
    return DenseMatrix(rows)


def mid(m: DenseMatrix) -> DenseMatrix:
    return m.mid()


def entries(m: DenseMatrix) -> list[list[acb]]:
    return [[m[i, j] for j in range(m.ncols())] for i in range(m.nrows())]


def max_abs(m: DenseMatrix) -> float:
    best = 0.0
    for i in range(m.nrows()):
        for j in range(m.ncols()):
            v = mag(m[i, j])
            if v > best:
                best = v
    return best


def trace(m: DenseMatrix) -> acb:
    t = acb(0)
    for i in range(m.nrows()):
        t += m[i, i]
    return t.mid()


def kron(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    ra, ca, rb, cb = a.nrows(), a.ncols(), b.nrows(), b.ncols()
    out = DenseMatrix(ra * rb, ca * cb)
    bb = entries(b)
    for i in range(ra):
        for j in range(ca):
            x = a[i, j]
            if x.is_zero():
                continue
            for k in range(rb):
                for l in range(cb):
                    y = bb[k][l]
                    if not y.is_zero():
                        out[i * rb + k, j * cb + l] = (x * y).mid()
    return out


def submatrix(m: DenseMatrix, rows: Sequence[int], cols: Sequence[int]) -> DenseMatrix:
    out = DenseMatrix(len(rows), len(cols))
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            out[a, b] = m[i, j]
    return out


def conj_transpose(m: DenseMatrix) -> DenseMatrix:
    return m.conjugate().transpose()


def gp_times_dense(g: GPMatrix, m: DenseMatrix) -> DenseMatrix:
    """g @ m by row moves."""
    out = DenseMatrix(m.nrows(), m.ncols())
    for j, (p, s) in enumerate(zip(g.perm, g.scales)):
        for c in range(m.ncols()):
            x = m[j, c]
            if not x.is_zero():
                out[p, c] = (s * x).mid()
    return out


def dense_times_gp(m: DenseMatrix, g: GPMatrix) -> DenseMatrix:
    """m @ g by column moves."""
    out = DenseMatrix(m.nrows(), m.ncols())
    for j, (p, s) in enumerate(zip(g.perm, g.scales)):
        for r in range(m.nrows()):
            x = m[r, p]
            if not x.is_zero():
                out[r, j] = (x * s).mid()
    return out


def lu_det(m: DenseMatrix) -> acb:
    """Determinant by Gaussian elimination with partial pivoting on modulus."""
    n = m.nrows()
    if n != m.ncols():
        raise DimensionMismatch("determinant of a non-square matrix")
    a = [row[:] for row in entries(m.mid())]
    det = acb(1)
    for k in range(n):
        piv = max(range(k, n), key=lambda i: mag(a[i][k]))
        if a[piv][k].is_zero():
            return acb(0)
        if piv != k:
            a[k], a[piv] = a[piv], a[k]
            det = -det
        pk = a[k][k]
        det = (det * pk).mid()
        inv = (1 / pk).mid()
        rowk = a[k]
        for i in range(k + 1, n):
            f = a[i][k]
            if f.is_zero():
                continue
            f = (f * inv).mid()
            rowi = a[i]
            for j in range(k + 1, n):
                if not rowk[j].is_zero():
                    rowi[j] = (rowi[j] - f * rowk[j]).mid()
    return det


def inverse(m: DenseMatrix) -> DenseMatrix:
    return m.solve(identity(m.nrows()), nonstop=True, algorithm="approx").mid()


def principal_root(x: acb, d: int) -> acb:
    """Principal-branch d-th root exp(log(x)/d)."""
    return (to_acb(x).log() / d).exp().mid()


# ---------------------------------------------------------------------------
# integer matrices


def _int_matrix(m) -> list[list[int]]:
    return [[int(x) for x in row] for row in m]


def int_identity(k: int) -> list[list[int]]:
    return [[int(i == j) for j in range(k)] for i in range(k)]


def int_matmul(a, b) -> list[list[int]]:
    if not a:
        return []
    cols = len(b[0]) if b else 0
    return [[sum(a[i][t] * b[t][j] for t in range(len(b))) for j in range(cols)] for i in range(len(a))]


def int_transpose(a) -> list[list[int]]:
    return [list(r) for r in zip(*a)] if a else []


def smith_form(m) -> tuple[list[list[int]], list[list[int]], list[list[int]]]:
    """Return (U, D, V) with U @ m @ V = D, U and V unimodular, D diagonal
    with d_1 | d_2 | ... and nonnegative entries."""
    a = _int_matrix(m)
    rows = len(a)
    cols = len(a[0]) if rows else 0
    u = int_identity(rows)
    v = int_identity(cols)

    def swap_rows(i, j):
        a[i], a[j] = a[j], a[i]
        u[i], u[j] = u[j], u[i]

    def swap_cols(i, j):
        for row in a:
            row[i], row[j] = row[j], row[i]
        for row in v:
            row[i], row[j] = row[j], row[i]

    def add_row(dst, src, f):
        if f:
            a[dst] = [x + f * y for x, y in zip(a[dst], a[src])]
            u[dst] = [x + f * y for x, y in zip(u[dst], u[src])]

    def add_col(dst, src, f):
        if f:
            for row in a:
                row[dst] += f * row[src]
            for row in v:
                row[dst] += f * row[src]

    t = 0
    while t < min(rows, cols):
        nz = [(abs(a[i][j]), i, j) for i in range(t, rows) for j in range(t, cols) if a[i][j]]
        if not nz:
            break
        _, i, j = min(nz)
        swap_rows(t, i)
        swap_cols(t, j)
        while True:
            done = True
            for i in range(t + 1, rows):
                if a[i][t]:
                    add_row(i, t, -(a[i][t] // a[t][t]))
                    if a[i][t]:
                        swap_rows(t, i)
                        done = False
            for j in range(t + 1, cols):
                if a[t][j]:
                    add_col(j, t, -(a[t][j] // a[t][t]))
                    if a[t][j]:
                        swap_cols(t, j)
                        done = False
            if done:
                bad = next(
                    ((i, j) for i in range(t + 1, rows) for j in range(t + 1, cols) if a[i][j] % a[t][t]),
                    None,
                )
                if bad is None:
                    break
                add_row(t, bad[0], 1)
        if a[t][t] < 0:
            a[t] = [-x for x in a[t]]
            u[t] = [-x for x in u[t]]
        t += 1
    return u, a, v


def int_det(m) -> int:
    a = [[Fraction(x) for x in row] for row in m]
    n = len(a)
    det = Fraction(1)
    for k in range(n):
        piv = next((i for i in range(k, n) if a[i][k]), None)
        if piv is None:
            return 0
        if piv != k:
            a[k], a[piv] = a[piv], a[k]
            det = -det
        det *= a[k][k]
        for i in range(k + 1, n):
            f = a[i][k] / a[k][k]
            if f:
                a[i] = [x - f * y for x, y in zip(a[i], a[k])]
    return int(det)


def int_inverse(m) -> list[list[int]]:
    """Inverse of a unimodular integer matrix."""
    n = len(m)
    a = [[Fraction(x) for x in row] + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(m)]
    for k in range(n):
        piv = next(i for i in range(k, n) if a[i][k])
        a[k], a[piv] = a[piv], a[k]
        p = a[k][k]
        a[k] = [x / p for x in a[k]]
        for i in range(n):
            if i != k and a[i][k]:
                f = a[i][k]
                a[i] = [x - f * y for x, y in zip(a[i], a[k])]
    out = [[x for x in row[n:]] for row in a]
    if any(x.denominator != 1 for row in out for x in row):
        raise ValueError("matrix is not unimodular")
    return [[int(x) for x in row] for row in out]


def int_rank(m) -> int:
    _, d, _ = smith_form(m)
    return sum(1 for i in range(min(len(d), len(d[0]) if d else 0)) if d[i][i])


def solve_integer(m, b) -> list[int] | None:
    """An integer solution x of m @ x = b, or None."""
    u, d, v = smith_form(m)
    ub = [sum(u[i][j] * b[j] for j in range(len(b))) for i in range(len(u))]
    cols = len(v)
    y = [0] * cols
    for i in range(len(ub)):
        di = d[i][i] if i < cols else 0
        if di:
            if ub[i] % di:
                return None
            y[i] = ub[i] // di
        elif ub[i]:
            return None
    return [sum(v[i][j] * y[j] for j in range(cols)) for i in range(cols)]


def integer_kernel(m) -> list[list[int]]:
    """Basis (as rows) of the saturated integer kernel of m."""
    rows = len(m)
    cols = len(m[0]) if rows else 0
    u, d, v = smith_form(m)
    r = sum(1 for i in range(min(rows, cols)) if d[i][i])
    return [[v[i][j] for i in range(cols)] for j in range(r, cols)]
