import itertools
import random

import numpy as np
import pytest

from pa_inv import catalog
from pa_inv.numeric import (
    RootOfUnity,
    acb,
    arb,
    conj_transpose,
    identity,
    int_matmul,
    int_transpose,
    int_det,
    mag,
    max_abs,
    to_complex,
    tolerance,
)
from pa_inv.qtorus import (
    CentralMonomial,
    MonomialMap,
    ScalarMap,
    SkewLattice,
    TorusRepresentation,
    functional_calculus,
    intertwine_reps,
    monomial_eigendata,
    monomial_intertwiner,
    rep_monomial,
    skew_normal_form,
    tensor_representation,
    weight_block_projectors,
)
from pa_inv.surface import epsilon_form, kashaev_lattice

TOL = tolerance(24)


def lattice(g):
    return SkewLattice(tuple(map(tuple, g)))


def unit_scalars(rng, rank):
    return ScalarMap(tuple(acb(0, 2 * rng.random()).__mul__(arb.pi()).exp() for _ in range(rank)))


def generic_scalars(rng, rank):
    return ScalarMap(tuple(acb(rng.uniform(0.5, 2), rng.uniform(-1, 1)) for _ in range(rank)))


def to_numpy(m):
    return np.array([[to_complex(m[i, j]) for j in range(m.ncols())] for i in range(m.nrows())])


def dist(a, b):
    return max_abs(a - b) / max(1.0, max_abs(a))


def block_form(lat, basis):
    c = [list(r) for r in basis.change]
    return int_matmul(int_matmul(int_transpose(c), [list(r) for r in lat.gram]), c)


def check_normal_form(lat, basis):
    assert abs(int_det([list(r) for r in basis.change])) == 1
    g = block_form(lat, basis)
    k = lat.rank
    expect = [[0] * k for _ in range(k)]
    for i, d in enumerate(basis.blocks):
        expect[2 * i][2 * i + 1] = d
        expect[2 * i + 1][2 * i] = -d
    assert g == expect


def test_normal_form_examples():
    j2 = lattice([[0, 1], [-1, 0]])
    b = skew_normal_form(j2)
    assert b.blocks == (1,) and b.radical_rank == 0
    check_normal_form(j2, b)

    once = lattice([[0, 2, -2], [-2, 0, 2], [2, -2, 0]])
    b = skew_normal_form(once)
    assert b.blocks == (2,) and b.radical_rank == 1
    check_normal_form(once, b)

    twice = lattice(epsilon_form(catalog.load_preset("t09265").triangulation))
    b = skew_normal_form(twice)
    assert sorted(b.blocks) == [1, 2] and b.radical_rank == 2
    check_normal_form(twice, b)


def test_normal_form_random():
    rng = random.Random(2)
    for _ in range(20):
        k = rng.randint(2, 6)
        g = [[0] * k for _ in range(k)]
        for i in range(k):
            for j in range(i + 1, k):
                g[i][j] = rng.randint(-3, 3)
                g[j][i] = -g[i][j]
        lat = lattice(g)
        check_normal_form(lat, skew_normal_form(lat))


@pytest.fixture(scope="module")
def kashaev_rep():
    lat = kashaev_lattice(catalog.load_preset("t09265").triangulation)
    sl = lattice(lat.gram)
    rng = random.Random(4)
    return TorusRepresentation(sl, RootOfUnity(3), generic_scalars(rng, sl.rank))


def test_generator_relations(kashaev_rep):
    rep = kashaev_rep
    q = rep.q
    k = rep.lattice.rank
    gens = [rep.monomial([int(i == j) for j in range(k)]).dense() for i in range(k)]
    for i in range(k):
        for j in range(k):
            w = rep.lattice.gram[i][j]
            assert dist(gens[i] * gens[j], (gens[j] * gens[i]) * q.power(2 * w)) < TOL


def test_weyl_composition_law(kashaev_rep):
    rep = kashaev_rep
    rng = random.Random(9)
    for _ in range(10):
        a = [rng.randint(-2, 2) for _ in range(rep.lattice.rank)]
        b = [rng.randint(-2, 2) for _ in range(rep.lattice.rank)]
        lhs = (rep_monomial(rep, a) @ rep_monomial(rep, b)).dense()
        rhs = rep_monomial(rep, [x + y for x, y in zip(a, b)]).dense() * rep.q.power(rep.lattice.omega(a, b))
        assert dist(lhs, rhs) < TOL


def test_zero_monomial_is_identity(kashaev_rep):
    assert dist(rep_monomial(kashaev_rep, [0] * 8).dense(), identity(kashaev_rep.dim)) < TOL


def test_center_acts_by_scalars(kashaev_rep):
    rep = kashaev_rep
    for g in rep.basis.gammas():
        m = rep.monomial(g)
        assert m.is_diagonal()
        assert all(mag(s - rep.scalar(g)) < TOL for s in m.scales)


RANK4 = [
    [[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]],
    [[0, 1, 1, 0], [-1, 0, 1, 1], [-1, -1, 0, 1], [0, -1, -1, 0]],
    [[0, 2, 0, 0], [-2, 0, 1, 0], [0, -1, 0, 2], [0, 0, -2, 0]],
]


@pytest.mark.parametrize("gram", RANK4)
def test_monomial_spectra_against_dense_eigensolver(gram):
    rng = random.Random(sum(map(abs, sum(gram, []))))
    lat = lattice(gram)
    rep = TorusRepresentation(lat, RootOfUnity(3), generic_scalars(rng, 4))
    tried = 0
    for k in itertools.product(range(-1, 2), repeat=4):
        if rep.is_central(k):
            if any(k):
                with pytest.raises(CentralMonomial):
                    monomial_eigendata(rep, k)
            continue
        roots, mult, vectors = monomial_eigendata(rep, k)
        ev = np.linalg.eigvals(to_numpy(rep.monomial(k).dense()))
        predicted = sorted((to_complex(r) for r in roots for _ in range(mult)), key=lambda z: (round(z.real, 8), z.imag))
        got = sorted(ev, key=lambda z: (round(z.real, 8), z.imag))
        assert np.allclose(predicted, got, atol=1e-9)
        # the combinatorial eigenvectors span each eigenspace
        assert sum(len(v) for v in vectors.values()) == rep.dim
        tried += 1
    assert tried > 10


def test_functional_calculus_reproduces_monomial():
    rng = random.Random(8)
    lat = lattice(RANK4[1])
    rep = TorusRepresentation(lat, RootOfUnity(5), generic_scalars(rng, 4))
    k = [1, 0, 1, 0]
    roots, _, _ = monomial_eigendata(rep, k)
    f = functional_calculus(rep, k, list(roots))
    assert dist(f, rep.monomial(k).dense()) < TOL
    sq = functional_calculus(rep, k, [r * r for r in roots])
    assert dist(sq, rep.monomial(k).power(2).dense()) < TOL


def _symplectic_examples():
    return [[[1, 1], [0, 1]], [[1, 0], [-1, 1]], [[2, 1], [1, 1]], [[0, -1], [1, 0]]]


@pytest.mark.parametrize("f", _symplectic_examples())
def test_monomial_intertwiner_is_unitary(f):
    rng = random.Random(3)
    lat = lattice([[0, 1], [-1, 0]])
    q = RootOfUnity(5)
    src = TorusRepresentation(lat, q, unit_scalars(rng, 2))
    tgt = TorusRepresentation(lat, q, unit_scalars(rng, 2))
    # choose the source scalar compatible with f (central characters must match)
    s_src = tgt.scalar.compose(f)
    src = TorusRepresentation(lat, q, s_src)
    fmap = MonomialMap(tuple(map(tuple, f)), s_src, tgt.scalar)
    B = monomial_intertwiner(src, tgt, fmap)
    for e in ([1, 0], [0, 1]):
        lhs = B * src.monomial(e).dense()
        rhs = tgt.monomial(fmap.image(e)).dense() * B * fmap.coefficient(e)
        assert dist(lhs, rhs) < TOL
    bb = conj_transpose(B) * B
    scale = bb[0, 0]
    assert dist(bb, identity(B.nrows()) * scale) < TOL


def test_intertwine_reps_changes_basis_only():
    rng = random.Random(12)
    lat = lattice(RANK4[2])
    q = RootOfUnity(3)
    s = unit_scalars(rng, 4)
    a = TorusRepresentation(lat, q, s)
    other = skew_normal_form(lat, None)
    b = TorusRepresentation(lat, q, s, other)
    U = intertwine_reps(a, b)
    for i in range(4):
        e = [int(i == j) for j in range(4)]
        assert dist(U * a.monomial(e).dense(), b.monomial(e).dense() * U) < TOL


def test_weight_blocks_partition(kashaev_rep):
    lat = kashaev_lattice(catalog.load_preset("t09265").triangulation)
    rep = TorusRepresentation(lattice(lat.gram), RootOfUnity(3), ScalarMap.ones(8),
                              skew_normal_form(lattice(lat.gram), lat.puncture_images[:-1]))
    blocks = weight_block_projectors(rep, lat.puncture_images[:-1])
    idx = sorted(i for v in blocks.values() for i in v)
    assert idx == list(range(rep.dim))
    assert len(blocks) == 3 and all(len(v) == 27 for v in blocks.values())


def test_tensor_representation_dimension():
    q = RootOfUnity(3)
    a = TorusRepresentation(lattice([[0, 1], [-1, 0]]), q, ScalarMap.ones(2))
    b = TorusRepresentation(lattice([[0, 2], [-2, 0]]), q, ScalarMap.ones(2))
    t = tensor_representation(a, b)
    assert t.dim == 9 and t.lattice.rank == 4
