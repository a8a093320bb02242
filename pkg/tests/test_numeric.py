import random

import pytest

from pa_inv.numeric import (
    DimensionMismatch,
    GPMatrix,
    RootOfUnity,
    acb,
    dense_from_rows,
    gp_compose,
    identity,
    lu_det,
    mag,
    max_abs,
    smith_form,
    int_matmul,
    int_det,
    tolerance,
    set_precision,
    working_precision,
)


def clock(q):
    n = q.n
    return GPMatrix(tuple(range(n)), tuple(q.power(2 * j) for j in range(n)))


def shift(n):
    return GPMatrix(tuple((j + 1) % n for j in range(n)), tuple(acb(1) for _ in range(n)))


def random_gp(rng, dim):
    perm = list(range(dim))
    rng.shuffle(perm)
    scales = [acb(rng.uniform(-2, 2), rng.uniform(-2, 2)) for _ in range(dim)]
    return GPMatrix(tuple(perm), tuple(scales))


def cofactor_det(rows):
    if len(rows) == 1:
        return rows[0][0]
    out = acb(0)
    for j in range(len(rows)):
        minor = [r[:j] + r[j + 1:] for r in rows[1:]]
        out += (-1) ** j * rows[0][j] * cofactor_det(minor)
    return out


def test_identity_compose():
    e = GPMatrix.identity(5)
    assert gp_compose(e, e) == e


def test_clock_shift_q_commutation():
    q = RootOfUnity(3)
    S, T = clock(q), shift(3)
    lhs = (S.dense() * T.dense())
    rhs = (T.dense() * S.dense()) * q.power(2)
    assert max_abs(lhs - rhs) < tolerance()
    assert max_abs(gp_compose(S, T).dense() - lhs) < tolerance()


def test_cycle_power_is_identity():
    for n in (3, 5, 7):
        assert shift(n).power(n) == GPMatrix.identity(n)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        gp_compose(GPMatrix.identity(2), GPMatrix.identity(3))


def test_gp_compose_matches_dense():
    rng = random.Random(1)
    for _ in range(20):
        a, b = random_gp(rng, 7), random_gp(rng, 7)
        assert max_abs(gp_compose(a, b).dense() - a.dense() * b.dense()) < 2.0 ** (-256 + 8) * 16


def test_det_examples():
    assert mag(lu_det(identity(9)) - 1) < tolerance()
    q = RootOfUnity(3)
    d = dense_from_rows([[q.power(1), 0, 0], [0, q.power(2), 0], [0, 0, 1]])
    assert mag(lu_det(d) - 1) < tolerance()


def test_det_against_cofactor_oracle():
    rng = random.Random(7)
    units = [acb(1), acb(-1), acb(0, 1), acb(0, -1)]
    rows = [[rng.choice(units) for _ in range(8)] for _ in range(8)]
    assert mag(lu_det(dense_from_rows(rows)) - cofactor_det(rows)) < 1e-70


def test_gp_det_is_exact_sign_times_product():
    rng = random.Random(3)
    g = random_gp(rng, 6)
    assert mag(g.det() - lu_det(g.dense())) < 1e-70


def test_det_multiplicative():
    rng = random.Random(11)
    for _ in range(5):
        a = dense_from_rows([[acb(rng.gauss(0, 1), rng.gauss(0, 1)) for _ in range(6)] for _ in range(6)])
        b = dense_from_rows([[acb(rng.gauss(0, 1), rng.gauss(0, 1)) for _ in range(6)] for _ in range(6)])
        prod = lu_det(a * b)
        assert mag(prod - lu_det(a) * lu_det(b)) < tolerance(16) * max(1.0, mag(prod)) * 100


def _check_smith(m):
    U, D, V = smith_form(m)
    assert int_matmul(int_matmul(U, m), V) == D
    assert abs(int_det(U)) == 1 and abs(int_det(V)) == 1
    diag = [D[i][i] for i in range(min(len(D), len(D[0])))]
    for i in range(len(D)):
        for j in range(len(D[0])):
            if i != j:
                assert D[i][j] == 0
    nz = [d for d in diag if d]
    for a, b in zip(nz, nz[1:]):
        assert b % a == 0
    return diag


def test_smith_examples():
    assert [abs(x) for x in _check_smith([[2, 0], [0, 3]])] == [1, 6]
    assert _check_smith([[0, 0], [0, 0]]) == [0, 0]
    assert [abs(x) for x in _check_smith([[1, 1], [1, 0]])] == [1, 1]


def test_smith_random():
    rng = random.Random(5)
    for _ in range(30):
        r, c = rng.randint(1, 5), rng.randint(1, 5)
        _check_smith([[rng.randint(-6, 6) for _ in range(c)] for _ in range(r)])


def test_root_of_unity_properties():
    for n, k in ((3, 1), (5, 2), (15, 8)):
        q = RootOfUnity(n, k)
        assert mag(abs(q.value) - 1) < tolerance()
        assert mag(q.value ** n - 1) < tolerance()
    with pytest.raises(ValueError):
        RootOfUnity(4)


def test_precision_floor():
    with pytest.raises(ValueError):
        set_precision(32)
    with working_precision(128):
        assert tolerance(0) == 2.0 ** -128
