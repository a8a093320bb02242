import cmath
import random

import pytest

from pa_inv import catalog
from pa_inv.invariants import (
    SURGERY_ACTIONS,
    HomologyData,
    PunctureWeights,
    audit_chain_lattices,
    compute_A_H,
    cyclic_dilog,
    expected_TH_magnitude,
    gauss_delta,
    gauss_sum_AH,
    homology_order,
    integer_signature,
    normalize_and_trace,
    psi_table,
    relative_residual,
    surgery_presets,
)
from pa_inv.numeric import DenseMatrix, RootOfUnity, acb, identity, mag, tolerance
from pa_inv.surface import twist_word_homology_action

TORUS_CURVES = [[0, 1], [-1, 0]]
TORUS_FORM = [[0, -1], [1, 0]]


def torus_AH(word, n):
    q = RootOfUnity(n, 1)
    hd = HomologyData(TORUS_FORM, twist_word_homology_action(word, TORUS_CURVES), [[0, 0]])
    return compute_A_H(hd, [0], PunctureWeights((0,), n), q)[2]


@pytest.mark.parametrize("n", [3, 5, 7])
def test_cyclic_dilog_against_direct_product(n):
    q = RootOfUnity(n, 1)
    rng = random.Random(n)
    for _ in range(5):
        x = complex(rng.uniform(-2, 2), rng.uniform(-2, 2))
        w = cmath.exp(2j * cmath.pi / n)
        ref = 1
        for j in range(1, n):
            ref *= (1 - w ** j * x) ** j
        got = complex(cyclic_dilog(q, x))
        assert abs(got - ref) < 1e-9 * max(1, abs(ref))
    assert mag(cyclic_dilog(q, 0) - 1) < 1e-70


@pytest.mark.parametrize("n", [3, 5])
def test_psi_identities_random_points(n):
    q = RootOfUnity(n, 1)
    rng = random.Random(100 + n)
    for _ in range(25):
        t = acb(rng.uniform(-3, 3), rng.uniform(-3, 3))
        table = psi_table(q, t)
        assert table.functional_equation_defect() < tolerance(40)
        assert table.product_defect() < tolerance(40)
        assert table.power_defect() < tolerance(40) * max(1.0, max(mag(v) ** n for v in table.values))
        for r in table.roots:
            assert mag(r ** n - t) < tolerance(40) * max(1.0, mag(t))


def test_psi_rejects_minus_one():
    from pa_inv.geometry import DegenerateShear

    with pytest.raises(DegenerateShear):
        psi_table(RootOfUnity(3, 1), -1)


def test_gauss_delta():
    assert mag(gauss_delta(RootOfUnity(3, 1)) - acb(0, 1)) < 1e-70
    for n in (5, 13):  # n = 1 mod 4
        assert mag(gauss_delta(RootOfUnity(n, 1)) - 1) < 1e-70
    for n in (3, 7, 11, 15):
        assert abs(mag(gauss_delta(RootOfUnity(n, 1))) - 1) < 1e-70


def test_integer_signature():
    assert integer_signature([[0, 1], [1, 0]]) == 0
    assert integer_signature([[2, 1], [1, 2]]) == 2
    assert integer_signature([[-1, 0, 0], [0, 3, 0], [0, 0, -2]]) == -1
    assert integer_signature([[0, 1, -1], [1, 0, 0], [-1, 0, 0]]) == 0


@pytest.mark.parametrize("n", [3, 5, 7])
@pytest.mark.parametrize("name", sorted(SURGERY_ACTIONS))
def test_gauss_sum_matches_intertwiner(name, n):
    pres = surgery_presets()[name]
    res, s = relative_residual(torus_AH(SURGERY_ACTIONS[name], n), gauss_sum_AH(pres, None, RootOfUnity(n, 1)))
    assert res < 1e-60
    assert abs(mag(s) - 1) < 1e-60


@pytest.mark.parametrize("pair", [("T_a", "T_b^-1"), ("T_b", "T_a"), ("T_a", "T_a")])
def test_gauss_sum_composition(pair):
    x, y = pair
    P = surgery_presets()
    comp = P[x].compose(P[y])
    res, s = relative_residual(torus_AH(SURGERY_ACTIONS[x] + SURGERY_ACTIONS[y], 5),
                               gauss_sum_AH(comp, None, RootOfUnity(5, 1)))
    assert res < 1e-60 and abs(mag(s) - 1) < 1e-60


def test_two_diagrams_agree_up_to_fourth_root():
    P = surgery_presets()
    q = RootOfUnity(7, 1)
    res, s = relative_residual(gauss_sum_AH(P["T_b^-1"], None, q), gauss_sum_AH(P["T_b^-1'"], None, q))
    assert res < 1e-60
    assert mag(s ** 4 - 1) < 1e-60


def test_homology_order_examples():
    ident = [[1, 0], [0, 1]]
    for n in (3, 5, 7):
        assert homology_order(ident, n) == n ** 3
    fig8 = catalog.load_preset("fig8").homology.capped_action
    t = catalog.load_preset("t09265").homology.capped_action
    assert [homology_order(fig8, n) for n in (3, 5, 15)] == [3, 5, 15]
    assert [homology_order(t, n) for n in (3, 5, 15)] == [9, 125, 1125]
    assert expected_TH_magnitude(t, 3) == pytest.approx(3 ** 0.5)


def test_normalized_trace_of_identity():
    nt = normalize_and_trace(identity(81))
    assert nt.magnitude == pytest.approx(81)
    scaled = (identity(9) * acb(3, 4)).mid()
    assert normalize_and_trace(scaled).magnitude == pytest.approx(9)


def test_normalized_trace_is_scale_free():
    m = DenseMatrix([[1, 2, 0], [0, 1, 3], [1, 0, 1]])
    a = normalize_and_trace(m).magnitude
    b = normalize_and_trace((m * acb(0.3, -2)).mid()).magnitude
    assert a == pytest.approx(b, rel=1e-12)


@pytest.mark.parametrize("name", ["fig8", "t09265", "s254", "9_2_50"])
def test_chain_lattices_compatible(prepared, name):
    assert audit_chain_lattices(prepared(name).cert) == 0


@pytest.mark.parametrize("name", ["fig8", "t09265", "s254", "9_2_50"])
def test_chain_boundary_discrepancy_is_root_of_unity(verified, name):
    chain = verified(name, 3).bundle.chain
    assert len(chain.steps) == len(catalog.load_preset(name).word.flips)
    for d in chain.discrepancy(3):
        assert mag(d ** 3 - 1) < 1e-60


@pytest.mark.parametrize("name", ["fig8", "t09265", "s254", "9_2_50"])
def test_decomposition_n3(verified, name):
    result = verified(name, 3)
    ver = result.verification
    assert ver.max_residual < 1e-60
    assert ver.max_trace_power_defect < 1e-60
    assert ver.det_spread < 1e-60
    kb = result.bundle.kashaev
    assert sorted(i for idx in kb.blocks.values() for i in idx) == list(range(kb.dim))
    assert mag(kb.determinant() - kb.dense().det()) < 1e-60 * max(1.0, mag(kb.determinant()))


@pytest.mark.parametrize("name", ["t09265", "s254", "9_2_50"])
def test_gl1_traces_take_two_values(verified, name):
    report = verified(name, 3).report
    expected = report["expected_T_H_trivial"]
    for row in report["T_H"]:
        if row.get("magnitude") is not None:
            assert min(abs(row["magnitude"]), abs(row["magnitude"] - expected)) < 1e-40
    trivial = next(r for r in report["T_H"] if not any(r["weights"]))
    assert trivial["magnitude"] == pytest.approx(expected, abs=1e-40)


def test_s254_swaps_punctures(verified):
    report = verified("s254", 3).report
    assert report["puncture_permutation"] == [1, 0]
    assert report["diagonal_blocks"] == [[0, 0]]
    moved = [r for r in report["T_CF"] if r["weights"] != r["target"]]
    assert len(moved) == 2 and all(r["trace"] is None for r in moved)
