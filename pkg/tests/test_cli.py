import json
import os
import subprocess
import sys

import pytest

from pa_inv import catalog
from pa_inv.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_preset_list(capsys):
    code, out, _ = run_cli(capsys, "preset", "list")
    assert code == 0
    for name in ("fig8", "t09265", "s254", "9_2_50"):
        assert name in out


def test_solve_writes_then_reads_cache(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "solve", "--preset", "fig8", "--cache", str(tmp_path), "--output", "json")
    first = json.loads(out)
    assert code == 0 and not first["from_cache"]
    assert first["gluing_residual"] < 2.0 ** -236
    files = list(tmp_path.glob("fig8-*.json"))
    assert len(files) == 1
    assert not list(tmp_path.glob(".*.tmp"))
    code, out, _ = run_cli(capsys, "solve", "--preset", "fig8", "--cache", str(tmp_path), "--output", "json")
    second = json.loads(out)
    assert second["from_cache"] and second["newton_iterations"] == 0
    assert second["shapes_digest"] == first["shapes_digest"]


def test_environment_variable_selects_cache(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("PA_INV_CACHE", str(tmp_path / "env"))
    code, _, _ = run_cli(capsys, "solve", "--preset", "fig8")
    assert code == 0
    assert list((tmp_path / "env").glob("fig8-*.json"))


def test_corrupted_cache_is_replaced(tmp_path, capsys):
    run_cli(capsys, "solve", "--preset", "fig8", "--cache", str(tmp_path))
    (path,) = tmp_path.glob("fig8-*.json")
    path.write_text("{ not json")
    with pytest.warns(UserWarning, match="unusable cache entry"):
        code, out, _ = run_cli(capsys, "solve", "--preset", "fig8", "--cache", str(tmp_path), "--output", "json")
    assert code == 0 and not json.loads(out)["from_cache"]
    json.loads(path.read_text())


def test_tampered_cache_shapes_rejected(tmp_path):
    p = catalog.load_preset("fig8")
    res = catalog.solve(p, cache=tmp_path)
    data = json.loads(res.path.read_text())
    data["solution"]["shapes"][0]["re"] = "0.4"
    res.path.write_text(json.dumps(data))
    with pytest.warns(UserWarning):
        again = catalog.solve(p, cache=tmp_path)
    assert not again.from_cache and again.solution.residual < 2.0 ** -236


def test_atomic_write_leaves_old_file_on_failure(tmp_path):
    target = tmp_path / "x.json"
    catalog.atomic_write_json(target, {"a": 1})
    with pytest.raises(TypeError):
        catalog.atomic_write_json(target, {"a": object()})
    assert json.loads(target.read_text()) == {"a": 1}
    assert [p.name for p in tmp_path.iterdir()] == ["x.json"]


def test_compute_json_report(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "compute", "--preset", "t09265", "--order", "3", "--cache", str(tmp_path),
                           "--output", "json")
    report = json.loads(out)
    assert code == 0
    assert report["T_K"]["magnitude"] == pytest.approx(13.444319, abs=5e-7)
    assert "timings" in report
    assert {r["weights"][0] for r in report["T_CF"]} == {0, 1, 2}


def test_invariant_and_weight_selection(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "compute", "--preset", "t09265", "--invariant", "gl1", "--weights", "trivial",
                           "--cache", str(tmp_path), "--output", "json")
    report = json.loads(out)
    assert "T_K" not in report and "T_CF" not in report
    assert len(report["T_H"]) == 1 and report["T_H"][0]["weights"] == [0, 0]
    code, out, _ = run_cli(capsys, "compute", "--preset", "t09265", "--invariant", "blwy", "--weights", "1,2",
                           "--cache", str(tmp_path), "--output", "json")
    assert [r["weights"] for r in json.loads(out)["T_CF"]] == [[1, 2]]


def test_reports_are_reproducible_without_timings(tmp_path, capsys):
    args = ["compute", "--preset", "s254", "--cache", str(tmp_path), "--no-timings", "--output", "json"]
    _, a, _ = run_cli(capsys, *args)
    _, b, _ = run_cli(capsys, *args)
    assert a == b
    assert "timings" not in json.loads(a)


def test_report_file_output(tmp_path, capsys):
    dest = tmp_path / "report.json"
    code, out, _ = run_cli(capsys, "verify", "--preset", "fig8", "--cache", str(tmp_path), "--output", str(dest))
    assert code == 0 and "PASS" in out
    assert json.loads(dest.read_text())["verification"]["passed"]


def test_verify_generator_route(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "verify", "--preset", "fig8", "--generator-check", "--cache", str(tmp_path),
                           "--output", "json")
    assert code == 0
    assert json.loads(out)["verification"]["generator_residual"] < 1e-60


def test_negative_control_exit_code(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "verify", "--preset", "fig8", "--perturb-bits", "40", "--cache", str(tmp_path),
                           "--output", "json")
    report = json.loads(out)
    assert code == 1 and report["perturbed"]
    assert report["verification"]["max_residual"] > 1e-20


def test_input_files(tmp_path, capsys):
    p = catalog.load_preset("fig8")
    (tmp_path / "tri.json").write_text(json.dumps(p.triangulation.to_json()))
    (tmp_path / "mc.json").write_text(json.dumps({**p.word.to_json(), "homology": p.raw["homology"]}))
    code, out, _ = run_cli(capsys, "verify", "--input", str(tmp_path / "tri.json"), str(tmp_path / "mc.json"),
                           "--no-cache", "--output", "json")
    assert code == 0
    assert json.loads(out)["preset"] == "custom"


@pytest.mark.parametrize("argv,code", [
    (["compute", "--preset", "nope"], 2),
    (["compute", "--preset", "fig8", "--order", "4"], 2),
    (["compute", "--preset", "fig8", "--precision", "32"], 2),
    (["compute", "--preset", "fig8", "--weights", "1,2,3", "--no-cache"], 2),
])
def test_error_exit_codes(capsys, argv, code):
    got, _, err = run_cli(capsys, *argv)
    assert got == code
    assert err.startswith("pa-inv:")


def test_unrecognized_input_file(tmp_path, capsys):
    (tmp_path / "junk.json").write_text("{}")
    code, _, err = run_cli(capsys, "solve", "--input", str(tmp_path / "junk.json"))
    assert code == 2 and "unrecognized" in err


def test_console_script(tmp_path):
    env = {**os.environ, "PA_INV_CACHE": str(tmp_path)}
    out = subprocess.run([sys.executable, "-m", "pa_inv.cli", "preset", "list"], capture_output=True, text=True,
                         env=env, check=True)
    assert "t09265" in out.stdout
