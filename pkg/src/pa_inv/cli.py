"""Command line interface: ``pa-inv solve|compute|verify|preset list|preset run``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import catalog
from .numeric import set_precision

log = logging.getLogger("pa_inv")


def _add_common(p: argparse.ArgumentParser, order: bool = True) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", help="name of a catalog preset")
    src.add_argument("--input", nargs="+", metavar="FILE",
                     help="preset file, or triangulation + mapping-class (+ gluing) files")
    if order:
        p.add_argument("--order", "-n", type=int, default=3, help="odd order n of the root of unity")
        p.add_argument("--root-exponent", type=int, default=None,
                       help="use q = exp(2 pi i k / n) (default: preset choice, else 1)")
    p.add_argument("--precision", type=int, default=256, help="working precision in bits")
    p.add_argument("--cache", default=None, help="shape cache directory (overrides PA_INV_CACHE)")
    p.add_argument("--no-cache", action="store_true", help="neither read nor write the shape cache")
    p.add_argument("--output", default="table", help="json, table, or a path ending in .json")
    p.add_argument("--no-timings", action="store_true", help="omit wall-clock data (bit-reproducible reports)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pa-inv", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the gluing equations and cache the shapes")
    _add_common(p, order=False)

    for name, helptext in (("compute", "compute normalized traces"), ("verify", "verify the decomposition")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.add_argument("--invariant", choices=sorted(catalog.INVARIANT_SETS), default="all" if name == "compute" else "verify")
        p.add_argument("--weights", default=None, help="all | invariant | trivial | '0,0;1,2'")
        if name == "verify":
            p.add_argument("--perturb-bits", type=int, default=None,
                           help="negative control: multiply shapes by 1 + 2^-BITS first")
            p.add_argument("--generator-check", action="store_true",
                           help="also run the flip-by-flip generator route")
            p.add_argument("--tolerance", type=float, default=1e-60)

    pp = sub.add_parser("preset", help="preset catalog")
    psub = pp.add_subparsers(dest="preset_command", required=True)
    psub.add_parser("list", help="list presets")
    pr = psub.add_parser("run", help="compute and verify a preset at its catalog orders")
    pr.add_argument("name")
    pr.add_argument("--order", "-n", type=int, action="append", default=None)
    pr.add_argument("--precision", type=int, default=256)
    pr.add_argument("--cache", default=None)
    pr.add_argument("--no-cache", action="store_true")
    pr.add_argument("--output", default="table")
    pr.add_argument("--no-timings", action="store_true")
    return parser


def _load(args) -> catalog.Preset:
    if getattr(args, "input", None):
        return catalog.preset_from_inputs(args.input)
    return catalog.load_preset(args.preset or "fig8")


def _emit(args, payload: dict, table: str) -> None:
    out = args.output
    if out == "json":
        print(json.dumps(payload, indent=1))
    elif out.endswith(".json"):
        catalog.atomic_write_json(Path(out), payload)
        print(table)
        print(f"report written to {out}")
    else:
        print(table)


def _fmt(x, digits: int = 6) -> str:
    return "-" if x is None else f"{x:.{digits}f}"


def render_table(report: dict) -> str:
    lines = [f"{report['preset']}  n={report['order']}  q=exp(2 pi i {report['root_exponent']}/{report['order']})"
             f"  precision={report['precision']}  volume={report['volume']:.6f}"]
    if "T_K" in report:
        lines.append(f"  |T^K|                 {_fmt(report['T_K']['magnitude'])}")
    for label, name in (("T_CF", "|T^CF|"), ("T_H", "|T^H|")):
        for row in report.get(label, []):
            w = ",".join(map(str, row["weights"]))
            if row.get("magnitude") is None:
                t = ",".join(map(str, row["target"]))
                lines.append(f"  {name:6s} zeta=({w}) -> ({t})  (not invariant)")
            else:
                lines.append(f"  {name:6s} zeta=({w}){'':8s}{_fmt(row['magnitude'])}")
    if "verification" in report:
        v = report["verification"]
        lines.append(f"  proportionality residual {v['max_residual']:.3e}")
        lines.append(f"  trace-power defect       {v['max_trace_power_defect']:.3e}")
        lines.append(f"  block det spread         {v['block_det_spread']:.3e}")
        if v.get("generator_residual") is not None:
            lines.append(f"  generator route residual {v['generator_residual']:.3e}")
        lines.append(f"  verification: {'PASS' if v['passed'] else 'FAIL'}")
    for c in report.get("checks", []):
        lines.append(f"  expected {c['quantity']} = {c['value']} ({c['provenance']}): "
                     f"{c['computed']:.9g} {'ok' if c['passed'] else 'MISMATCH'}")
    return "\n".join(lines)


def cmd_solve(args) -> int:
    preset = _load(args)
    res = catalog.solve(preset, cache=args.cache, use_cache=not args.no_cache)
    sol = res.solution
    payload = {
        "preset": preset.name,
        "precision": args.precision,
        "from_cache": res.from_cache,
        "newton_iterations": 0 if res.from_cache else sol.iterations,
        "gluing_residual": sol.residual,
        "volume": sol.volume(),
        "shapes_digest": sol.digest(),
        "cache": str(res.path) if res.path else None,
    }
    table = (f"{preset.name}: residual {sol.residual:.3e}, volume {sol.volume():.9f}, "
             f"{'cached' if res.from_cache else f'{sol.iterations} Newton steps'}")
    _emit(args, payload, table)
    return 0


def _compute(args, verify: bool) -> int:
    preset = _load(args)
    prep = catalog.prepare(preset, args.cache, not args.no_cache, getattr(args, "perturb_bits", None))
    result = catalog.run(prep, args.order, args.invariant, args.weights, args.root_exponent, verify=verify,
                         generator_check=getattr(args, "generator_check", False), timings=not args.no_timings)
    _emit(args, result.report, render_table(result.report))
    if verify:
        tol = getattr(args, "tolerance", 1e-60)
        return 0 if result.verification is not None and result.verification.passed(tol) else 1
    return 0


def cmd_compute(args) -> int:
    return _compute(args, verify=False)


def cmd_verify(args) -> int:
    return _compute(args, verify=True)


def cmd_preset(args) -> int:
    if args.preset_command == "list":
        for name in catalog.list_presets():
            p = catalog.load_preset(name)
            orders = sorted({e["order"] for e in p.expected})
            g, np_ = p.triangulation.genus, p.triangulation.num_punctures
            print(f"{name:8s} g={g} p={np_} flips={len(p.word.flips):2d} orders={orders}  {p.title}")
        return 0
    preset = catalog.load_preset(args.name)
    orders = args.order or sorted({e["order"] for e in preset.expected})
    prep = catalog.prepare(preset, args.cache, not args.no_cache)
    reports, ok = [], True
    for n in orders:
        result = catalog.run(prep, n, "verify", timings=not args.no_timings)
        reports.append(result.report)
        ok = ok and result.verification.passed() and all(c["passed"] for c in result.report["checks"])
    payload = {"preset": preset.name, "runs": reports, "passed": ok}
    _emit(args, payload, "\n".join(render_table(r) for r in reports))
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    bits = getattr(args, "precision", 256)
    if bits < 64:
        print("pa-inv: precision must be at least 64 bits", file=sys.stderr)
        return 2
    set_precision(bits)
    handlers = {"solve": cmd_solve, "compute": cmd_compute, "verify": cmd_verify, "preset": cmd_preset}
    try:
        return handlers[args.command](args)
    except catalog.PresetError as exc:
        print(f"pa-inv: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        mod = type(exc).__module__.rsplit(".", 1)[-1]
        print(f"pa-inv: [{mod}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
