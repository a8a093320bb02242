"""Preset catalog, file ingestion, shape caching and the end-to-end pipeline."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .geometry import (
    GluingSystem,
    LayeredTriangulation,
    ShapeSolution,
    ShearBendLayers,
    KashaevCoordinateLift,
    build_layered,
    gluing_residual,
    gluing_system,
    ingest_gluing,
    lift_to_kashaev_coordinates,
    newton_refine,
    shear_bend_layers,
    solution_from_json,
    solution_to_json,
)
from .invariants import (
    HomologyData,
    IntertwinerBundle,
    PunctureWeights,
    VerificationReport,
    compute_bundle,
    expected_TH_magnitude,
    generator_route_residual,
    homology_order,
    verify_decomposition,
)
from .numeric import RootOfUnity, arb, get_precision, parse_complex, relaxed_checks, tolerance
from .surface import IdealTriangulation, MappingClassCertificate, MappingClassWord, apply_mapping_class

log = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).with_name("presets")
DEFAULT_CACHE = Path.home() / ".cache" / "pa_inv"


class PresetError(ValueError):
    pass


@dataclass
class Preset:
    name: str
    title: str
    triangulation: IdealTriangulation
    word: MappingClassWord
    homology: HomologyData | None
    volume: float | None
    seeds: list[dict] | None
    root_exponents: dict[int, int] = field(default_factory=dict)
    expected: list[dict] = field(default_factory=list)
    cusp_rows: GluingSystem | None = None
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, data: dict) -> "Preset":
        tri = IdealTriangulation.from_json(data["triangulation"])
        word = MappingClassWord.from_json(data["mapping_class"])
        hd = HomologyData.from_json(data["homology"]) if data.get("homology") else None
        geo = data.get("geometry", {})
        cusp = None
        if geo.get("equations"):
            sysm, _ = ingest_gluing(geo)
            cusp = _cusp_part(sysm)
        return cls(
            name=data.get("name", "custom"),
            title=data.get("title", ""),
            triangulation=tri,
            word=word,
            homology=hd,
            volume=geo.get("volume"),
            seeds=geo.get("seeds") or geo.get("shapes"),
            root_exponents={int(k): int(v) for k, v in data.get("root_exponents", {}).items()},
            expected=list(data.get("expected", [])),
            cusp_rows=cusp,
            raw=data,
        )

    def certificate(self) -> MappingClassCertificate:
        return apply_mapping_class(self.triangulation, self.word)

    def root(self, n: int, k: int | None = None) -> RootOfUnity:
        return RootOfUnity(n, k if k is not None else self.root_exponents.get(n, 1))

    def digest(self) -> str:
        payload = {
            "triangulation": self.triangulation.to_json(),
            "mapping_class": self.word.to_json(),
            "cusp": None if self.cusp_rows is None else [self.cusp_rows.A, self.cusp_rows.B, self.cusp_rows.nu],
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def expected_for(self, n: int) -> list[dict]:
        return [e for e in self.expected if e.get("order") == n]


def _cusp_part(sysm: GluingSystem) -> GluingSystem | None:
    keep = [i for i, k in enumerate(sysm.kinds) if k != "edge"]
    if not keep:
        return None
    return GluingSystem([sysm.A[i] for i in keep], [sysm.B[i] for i in keep], [sysm.nu[i] for i in keep],
                        [sysm.kinds[i] for i in keep])


def list_presets() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.json"))


def load_preset(name: str) -> Preset:
    path = PRESET_DIR / f"{name}.json"
    if not path.exists():
        raise PresetError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    with open(path) as fh:
        return Preset.from_json(json.load(fh))


def preset_from_inputs(paths: Sequence[str | os.PathLike]) -> Preset:
    """Assemble a preset from a full preset file or from separate
    triangulation / mapping-class / gluing files (recognized by their keys)."""
    parts: dict[str, dict] = {}
    for p in paths:
        with open(p) as fh:
            data = json.load(fh)
        if "triangulation" in data and "mapping_class" in data:
            parts["preset"] = data
        elif "faces" in data:
            parts["triangulation"] = data
        elif "flips" in data:
            parts["mapping_class"] = data
        elif "equations" in data or "shapes" in data:
            parts["geometry"] = data
        else:
            raise PresetError(f"{p}: unrecognized input file")
    if "preset" in parts:
        data = dict(parts["preset"])
        if "geometry" in parts:
            data["geometry"] = {**data.get("geometry", {}), **parts["geometry"]}
        return Preset.from_json(data)
    if "triangulation" not in parts or "mapping_class" not in parts:
        raise PresetError("need a triangulation file and a mapping-class file")
    mc = parts["mapping_class"]
    data = {
        "name": mc.get("name", "custom"),
        "triangulation": parts["triangulation"],
        "mapping_class": mc,
        "homology": mc.get("homology"),
        "geometry": parts.get("geometry", {}),
    }
    return Preset.from_json(data)


# ---------------------------------------------------------------------------
# cache


def cache_dir(explicit: str | os.PathLike | None = None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get("PA_INV_CACHE")
    return Path(env) if env else DEFAULT_CACHE


def atomic_write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(data, fh, indent=1)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cache_path(preset: Preset, bits: int, directory: Path) -> Path:
    return directory / f"{preset.name}-{preset.digest()}-{bits}.json"


@dataclass
class SolveResult:
    solution: ShapeSolution
    from_cache: bool
    path: Path | None
    seconds: float


def solve(preset: Preset, lt: LayeredTriangulation | None = None, cache: str | os.PathLike | None = None,
          use_cache: bool = True) -> SolveResult:
    """Geometric solution of the gluing equations at the working precision."""
    t0 = time.time()
    lt = lt or build_layered(preset.certificate())
    sysm = gluing_system(lt, preset.cusp_rows)
    bits = get_precision()
    path = cache_path(preset, bits, cache_dir(cache)) if use_cache else None
    if path is not None and path.exists():
        try:
            with open(path) as fh:
                data = json.load(fh)
            if data.get("digest_preset") != preset.digest() or data.get("precision") != bits:
                raise ValueError("cache entry belongs to another input")
            sol = solution_from_json(data["solution"], sysm)
            if not sol.residual < tolerance(24):
                raise ValueError(f"cached residual {sol.residual:.3e} too large")
            if preset.volume is not None and abs(sol.volume() - preset.volume) > 1e-6:
                raise ValueError("cached shapes have the wrong volume")
            return SolveResult(sol, True, path, time.time() - t0)
        except Exception as exc:  # corrupted or stale entry
            warnings.warn(f"ignoring unusable cache entry {path}: {exc}")
    seeds = None
    if preset.seeds:
        seeds = [parse_complex(s["re"], s.get("im", "0")) for s in preset.seeds]
    sol = newton_refine(sysm, seeds, expected_volume=preset.volume)
    # continue from the serialized shapes so cold and warm runs agree bit for bit
    data = solution_to_json(sol)
    steps = sol.iterations
    sol = solution_from_json(data, sysm)
    sol.iterations = steps
    if path is not None:
        atomic_write_json(path, {
            "preset": preset.name,
            "digest_preset": preset.digest(),
            "precision": bits,
            "volume": sol.volume(),
            "solution": data,
        })
    return SolveResult(sol, False, path, time.time() - t0)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class Prepared:
    preset: Preset
    cert: MappingClassCertificate
    lt: LayeredTriangulation
    solution: ShapeSolution  # positively oriented
    quantum: ShapeSolution  # the solution seen by the quantum side
    sbl: ShearBendLayers
    lift: KashaevCoordinateLift
    solve_info: SolveResult | None = None
    relax_bits: int = 0  # nonzero only for perturbed negative controls


def perturb_solution(sol: ShapeSolution, bits: int) -> ShapeSolution:
    """Multiply every shape by 1 + 2^-bits, keeping the log branches."""
    eps = arb(2) ** (-bits)
    factor = 1 + eps
    shapes, log_z, log_zpp = [], [], []
    for z, lz, lzpp in zip(sol.shapes, sol.log_z, sol.log_zpp):
        w = (z * factor).mid()
        old_pp, new_pp = (1 - 1 / z), (1 - 1 / w)
        shapes.append(w)
        log_z.append((lz + factor.log()).mid())
        log_zpp.append((lzpp + (new_pp / old_pp).log()).mid())
    return ShapeSolution(shapes, log_z, log_zpp, gluing_residual(sol.system, shapes), sol.system, sol.iterations)


def prepare(preset: Preset, cache: str | os.PathLike | None = None, use_cache: bool = True,
            perturb_bits: int | None = None) -> Prepared:
    cert = preset.certificate()
    lt = build_layered(cert)
    info = solve(preset, lt, cache, use_cache)
    quantum = info.solution.conjugate()
    if perturb_bits is None:
        sbl = shear_bend_layers(lt, quantum)
        lift = lift_to_kashaev_coordinates(lt, sbl)
        return Prepared(preset, cert, lt, info.solution, quantum, sbl, lift, info)
    quantum = perturb_solution(quantum, perturb_bits)
    # let the damaged data reach the final residuals
    relax = max(0, get_precision() - perturb_bits - 20)  # checks then accept ~2^(20-bits)
    with relaxed_checks(relax):
        sbl = shear_bend_layers(lt, quantum, audit=False)
        lift = lift_to_kashaev_coordinates(lt, sbl)
    return Prepared(preset, cert, lt, info.solution, quantum, sbl, lift, info, relax)


def parse_weights(selector: str | None, p: int, n: int, perm: Sequence[int]) -> list[PunctureWeights] | None:
    """``all`` | ``invariant`` | ``trivial`` | explicit tuples ``"0,0;1,2"``."""
    if selector in (None, "", "all"):
        return None
    if selector == "trivial":
        return [PunctureWeights((0,) * p, n)]
    if selector == "invariant":
        return [w for w in PunctureWeights.all(p, n) if w.permuted(perm) == w]
    out = []
    for chunk in selector.split(";"):
        exps = tuple(int(x) % n for x in chunk.split(","))
        if len(exps) != p:
            raise PresetError(f"weight {chunk!r} needs {p} exponents")
        out.append(PunctureWeights(exps, n))
    return out


INVARIANT_SETS = {
    "bb": ("bb",),
    "blwy": ("blwy",),
    "gl1": ("gl1",),
    "all": ("bb", "blwy", "gl1"),
    "verify": ("bb", "blwy", "gl1"),
}


@dataclass
class RunResult:
    bundle: IntertwinerBundle
    report: dict
    verification: VerificationReport | None


def run(prep: Prepared, n: int, invariant: str = "all", weights: str | None = None, root_exponent: int | None = None,
        verify: bool = False, generator_check: bool = False, timings: bool = True) -> RunResult:
    if n < 3 or n % 2 == 0:
        raise PresetError("order must be odd and at least 3")
    verify = verify or invariant == "verify"
    which = INVARIANT_SETS[invariant] if not verify else INVARIANT_SETS["verify"]
    q = prep.preset.root(n, root_exponent)
    p = prep.cert.start.num_punctures
    perm = tuple(prep.cert.puncture_permutation)
    wsel = None if verify else parse_weights(weights, p, n, perm)
    t0 = time.time()
    with relaxed_checks(prep.relax_bits):
        return _run(prep, n, q, which, wsel, verify, generator_check, timings, t0)


def _run(prep, n, q, which, wsel, verify, generator_check, timings, t0) -> RunResult:
    hd = prep.preset.homology
    perm = tuple(prep.cert.puncture_permutation)
    bundle = compute_bundle(prep.cert, prep.sbl, prep.lift, q, hd, which, wsel)
    report = {
        "preset": prep.preset.name,
        "order": n,
        "root_exponent": q.k,
        "precision": get_precision(),
        "shapes_digest": prep.solution.digest(),
        "volume": prep.solution.volume(),
        "gluing_residual": prep.solution.residual,
        "perturbed": prep.relax_bits != 0,
        "puncture_permutation": list(perm),
    }
    if bundle.kashaev is not None:
        report["T_K"] = bundle.kashaev.normalized_trace().to_json()
        report["diagonal_blocks"] = [list(k) for k, t in bundle.kashaev.targets.items() if k == t]
    for label, ops in (("T_CF", bundle.cf), ("T_H", bundle.gl1)):
        if not ops:
            continue
        rows = []
        for w, op in ops.items():
            row = {"weights": list(w), "target": list(op.target.exponents)}
            if op.invariant:
                row.update(op.normalized_trace().to_json())
            else:
                row["trace"] = None  # operator between distinct weight spaces
            rows.append(row)
        report[label] = rows
    if hd is not None and hd.capped_action is not None:
        report["homology_order"] = homology_order(hd.capped_action, n)
        report["expected_T_H_trivial"] = expected_TH_magnitude(hd.capped_action, n)
    ver = None
    if verify:
        ver = verify_decomposition(bundle, prep.lift.lattice, strict=False)
        if generator_check and bundle.kashaev is not None:
            ver.generator_residual = generator_route_residual(prep.cert, bundle.kashaev.rep, bundle.kashaev.dense(), q)
        report["verification"] = ver.to_json()
        report["verification"]["passed"] = ver.passed()
    report["checks"] = check_expected(prep.preset, n, report, ver)
    if timings:
        report["timings"] = {**bundle.timings, "total": time.time() - t0}
        if prep.solve_info is not None:
            report["timings"]["solve"] = prep.solve_info.seconds
    return RunResult(bundle, report, ver)


def _trivial_row(rows: list[dict] | None) -> dict | None:
    for r in rows or []:
        if not any(r["weights"]):
            return r
    return None


def check_expected(preset: Preset, n: int, report: dict, ver: VerificationReport | None) -> list[dict]:
    """Compare a report with the catalog's expected values for this order."""
    out = []
    tk = report.get("T_K", {}).get("magnitude")
    cf = _trivial_row(report.get("T_CF"))
    tcf = cf.get("magnitude") if cf else None
    for e in preset.expected_for(n):
        kind = e["quantity"]
        got = None
        if kind == "TK":
            got = tk
        elif kind == "TCF_trivial":
            got = tcf
        elif kind == "TK_over_TCF_trivial" and tk is not None and tcf:
            got = tk / tcf
        elif kind == "TK_equals_TCF" and tk is not None and tcf is not None:
            got = abs(tk - tcf)
        elif kind == "diagonal_blocks" and "diagonal_blocks" in report:
            got = len(report["diagonal_blocks"])
        if got is None:
            continue
        target = 0.0 if e.get("value") is None else e["value"]
        ok = abs(got - target) <= e["tolerance"]
        out.append({**e, "computed": got, "passed": ok})
    return out
