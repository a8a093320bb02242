"""Acceptance criteria, one test (and one PASS/FAIL line) per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdicts are
repeated in the "acceptance criteria" section of the terminal summary.
"""
import math
import subprocess
import sys
from pathlib import Path

import pytest

from pa_inv import catalog
from pa_inv.numeric import get_precision

PRESETS = ["fig8", "t09265", "s254", "9_2_50"]
TESTS = Path(__file__).parent

# tolerances
TOL_6DP = 5e-7
TOL_5DP = 5e-6
TOL_OPERATOR = 1e-60
GLUING = 2.0 ** -236
NEGATIVE_FLOOR = 1e-20


def trivial_cf(report):
    return next(r for r in report["T_CF"] if not any(r["weights"]))


def test_criterion_1_t09265_n3(verified, criterion):
    report = verified("t09265", 3).report
    tk = report["T_K"]["magnitude"]
    ratio = tk / trivial_cf(report)["magnitude"]
    ok = get_precision() == 256 and abs(tk - 13.444319) <= TOL_6DP and abs(ratio - math.sqrt(3)) <= TOL_6DP
    assert criterion(1, ok, f"|T^K| = {tk:.7f} (13.444319), |T^K|/|T^CF_(1,1)| = {ratio:.7f} (sqrt 3)")


def test_criterion_2_t09265_n5(verified, criterion):
    report = verified("t09265", 5).report
    tk = report["T_K"]["magnitude"]
    ratio = tk / trivial_cf(report)["magnitude"]
    ok = abs(tk - 31.451090) <= TOL_6DP and abs(ratio - 5) <= TOL_6DP
    assert criterion(2, ok, f"|T^K| = {tk:.7f} (31.451090), |T^K|/|T^CF_(1,1)| = {ratio:.7f} (5)")


def test_criterion_3_s254(verified, criterion):
    report = verified("s254", 3).report
    tk = report["T_K"]["magnitude"]
    tcf = trivial_cf(report)["magnitude"]
    diag = report["diagonal_blocks"]
    ok = abs(tk - 4.19825) <= TOL_5DP and abs(tcf - 4.19825) <= TOL_5DP and diag == [[0, 0]]
    assert criterion(3, ok, f"|T^K| = {tk:.6f}, |T^CF_(1,1)| = {tcf:.6f} (4.19825), diagonal blocks {diag}")


def test_criterion_4_9_2_50_trace_identity(verified, criterion):
    result = verified("9_2_50", 3)
    blocks = {b.weights: b for b in result.verification.blocks}
    trivial, moved = blocks[(0, 0)], blocks[(1, 2)]
    eps = moved.TH.value / trivial.TH.value
    combo = abs(trivial.TCF.value + 2 * eps * moved.TCF.value)
    tk = result.verification.TK.magnitude_arb
    residual = float(abs(tk - combo))
    unimodular = abs(float(abs(eps)) - 1)
    diag = len(result.report["diagonal_blocks"])
    ok = residual < TOL_OPERATOR and unimodular < TOL_OPERATOR and diag == 3
    e = complex(eps)
    assert criterion(4, ok, f"| |T^K| - |T^CF_1 + 2 eps T^CF_q| | = {residual:.2e}, "
                            f"eps = {e.real:+.6f}{e.imag:+.6f}i, {diag} diagonal blocks")


def test_criterion_5_fig8_n15(verified, prepared, criterion):
    result = verified("fig8", 15)
    (block,) = result.verification.blocks  # one puncture, one weight space
    tk = result.verification.TK.magnitude_arb
    diff = float(abs(tk - block.TCF.magnitude_arb))
    gluing = prepared("fig8").solution.residual
    ok = result.report["root_exponent"] == 8 and diff < TOL_OPERATOR and gluing < GLUING
    assert criterion(5, ok, f"q = exp(16 pi i/15), | |T^K| - |T^CF| | = {diff:.2e}, "
                            f"|T^K| = {float(tk):.9f}, gluing residual {gluing:.2e}")


RUNS = [(name, 3) for name in PRESETS] + [("t09265", 5), ("fig8", 15)]


def test_criterion_6_operator_identity_all_presets(verified, criterion):
    worst_res = worst_pow = worst_det = 0.0
    count = 0
    for name, n in RUNS:
        ver = verified(name, n).verification
        for b in ver.blocks:
            worst_res = max(worst_res, b.residual)
            if b.trace_power_defect is not None:
                worst_pow = max(worst_pow, b.trace_power_defect)
                count += 1
        worst_det = max(worst_det, ver.det_spread)
    ok = worst_res < TOL_OPERATOR and worst_pow < TOL_OPERATOR and count > 0
    assert criterion(6, ok, f"{len(RUNS)} runs, {count} diagonal blocks: max residual {worst_res:.2e}, "
                            f"max trace-power defect (m = 1..2n) {worst_pow:.2e}, det spread {worst_det:.2e}")


PROPERTY_TESTS = [
    "test_qtorus.py::test_generator_relations",
    "test_qtorus.py::test_weyl_composition_law",
    "test_qtorus.py::test_center_acts_by_scalars",
    "test_qtorus.py::test_monomial_spectra_against_dense_eigensolver",
    "test_invariants.py::test_psi_identities_random_points",
    "test_surface.py::test_flip_involution_random",
    "test_qtorus.py::test_monomial_intertwiner_is_unitary",
    "test_invariants.py::test_decomposition_n3",
    "test_invariants.py::test_gauss_sum_matches_intertwiner",
    "test_invariants.py::test_gauss_sum_composition",
    "test_invariants.py::test_two_diagrams_agree_up_to_fourth_root",
]


def test_criterion_7_property_suites(criterion, tmp_path):
    cmd = [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "--rootdir", str(TESTS.parent),
           "--basetemp", str(tmp_path / "run")]
    cmd += [str(TESTS / t) for t in PROPERTY_TESTS]
    out = subprocess.run(cmd, capture_output=True, text=True, cwd=TESTS.parent)
    summary = out.stdout.strip().splitlines()[-1] if out.stdout.strip() else out.stderr[-200:]
    ok = out.returncode == 0
    assert criterion(7, ok, f"{len(PROPERTY_TESTS)} property suites: {summary}"), out.stdout[-3000:]


def test_criterion_8_negative_control(cache_root, criterion):
    residuals = {}
    for name in PRESETS:
        prep = catalog.prepare(catalog.load_preset(name), cache=cache_root, perturb_bits=40)
        ver = catalog.run(prep, 3, "verify", timings=False).verification
        residuals[name] = ver.max_residual
    ok = all(r > NEGATIVE_FLOOR for r in residuals.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in residuals.items())
    assert criterion(8, ok, f"shapes x (1 + 2^-40): residuals {detail} (all must exceed 1e-20)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
