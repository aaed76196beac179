"""Scenario runner.

    conjflow run SCENARIO.json [--out DIR] [--csv] [--seed N] [--step H]
    conjflow validate SCENARIO.json
    conjflow catalog

Exit codes: 0 success, 2 invalid scenario, 3 numerical-quality failure,
4 any other error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .conjugate import detect, diagonal_family, isolation_check, morse_flow, truncation_study
from .construct import SingularityPrescription, build_operator, full_pipeline, prescribed_curve
from .errors import BudgetError, PreconditionError, QualityError, ScenarioError
from .linalg_core import Tolerance
from .morse import discretize, index_curve, index_of_form
from .system import CATALOG, Constant, SymplecticSystemSpec, riemannian_system

SCHEMA_VERSION = 1

SCENARIO_KINDS = {
    "system": "Detect conjugate instants of a symplectic system; Morse flow and isolation checks.",
    "prescription": "Build the operator of a prescription and detect the zeros of T(t) = t - A.",
    "truncation_family": "Truncation study of the diagonal family T_N(t) = t - diag(1 - 1/k).",
    "morse": "Index of the discretized index form across meshes, compared with the detector.",
    "roundtrip": "Prescription to metric and back: full pipeline with a match verdict.",
}

SYSTEM_PRESETS = {
    "riemannian_constant_curvature": "A = 0, B = 1, C = -kappa; instants at k pi / sqrt(kappa).",
    "flat": "A = 0, B = 1, C = 0; no conjugate instants.",
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_matrix = {"type": "array", "items": {"type": "array", "items": _num}}
_component = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": sorted(CATALOG)}},
}

SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": sorted(SCENARIO_KINDS)},
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "grid": {
            "type": "object",
            "properties": {"step": _pos},
            "additionalProperties": False,
        },
        "tolerances": {
            "type": "object",
            "properties": {"kernel_tol": _pos, "gap_tol": _pos},
            "additionalProperties": False,
        },
        "system": {
            "type": "object",
            "properties": {
                "preset": {"enum": sorted(SYSTEM_PRESETS)},
                "n": {"type": "integer", "minimum": 1},
                "kappa": _num,
                "a": _num,
                "b": _num,
                "A": _component,
                "B": _component,
                "C": _component,
            },
        },
        "prescription": {
            "type": "object",
            "properties": {
                "c": _num,
                "b": {"anyOf": [_num, {"const": "inf"}]},
                "points": {"type": "array", "items": _num},
                "multiplicities": {
                    "type": "array",
                    "items": {"anyOf": [{"type": "integer", "minimum": 1}, {"const": "inf"}]},
                },
                "intervals": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}},
                "budget": {"type": "integer", "minimum": 1},
                "cap": {"type": "integer", "minimum": 1},
                "density": _pos,
            },
            "additionalProperties": False,
        },
        "a": _num,
        "truncation": {
            "type": "object",
            "required": ["dims"],
            "properties": {
                "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "probes": {"type": "array", "items": _num},
                "eps": {"type": "array", "items": _pos},
            },
            "additionalProperties": False,
        },
        "morse": {
            "type": "object",
            "properties": {
                "t_end": _num,
                "densities": {"type": "array", "items": _pos, "minItems": 1},
                "profile_points": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {"csv": {"type": "boolean"}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def _field_path(err):
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def _check_finite(obj, path=""):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ScenarioError(path or "<root>", "numbers must be finite")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}" if path else str(k))
    if isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}.{i}" if path else str(i))


def _needs(scenario, key):
    if key not in scenario:
        raise ScenarioError(key, f"required for kind {scenario['kind']!r}")


def validate_scenario(scenario):
    """Raise :class:`ScenarioError` naming the offending field."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(scenario), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ScenarioError(_field_path(e), e.message)
    _check_finite(scenario)
    kind = scenario["kind"]
    if kind in ("system", "morse"):
        _needs(scenario, "system")
        try:
            X = build_system(scenario["system"])
        except (PreconditionError, KeyError, ValueError, TypeError) as exc:
            raise ScenarioError("system", str(exc)) from None
        step = scenario.get("grid", {}).get("step", 1e-3)
        _check_step(X.a, X.b, step)
        if kind == "morse" and not X.riemannian:
            raise ScenarioError("system", "morse scenarios need a Riemannian system")
    if kind in ("prescription", "roundtrip"):
        _needs(scenario, "prescription")
        try:
            p = SingularityPrescription.from_dict(scenario["prescription"])
        except (PreconditionError, ValueError, TypeError) as exc:
            raise ScenarioError("prescription", str(exc)) from None
        try:
            build_operator(p)
        except BudgetError as exc:
            raise ScenarioError("prescription.budget", str(exc)) from None
    if kind == "truncation_family":
        _needs(scenario, "truncation")
        dims = scenario["truncation"]["dims"]
        if any(b <= a for a, b in zip(dims, dims[1:])):
            raise ScenarioError("truncation.dims", "must be strictly increasing")
    tol = scenario.get("tolerances", {})
    if tol and not tol.get("kernel_tol", 1e-9) < tol.get("gap_tol", 1e-6):
        raise ScenarioError("tolerances", "kernel_tol must be smaller than gap_tol")


def _check_step(a, b, step):
    steps = (b - a) / step
    if abs(round(steps) - steps) > 1e-6 * max(1.0, steps) or round(steps) < 1:
        raise ScenarioError("grid.step", f"step {step} does not divide the horizon {b - a}")


def build_system(d) -> SymplecticSystemSpec:
    preset = d.get("preset")
    if preset == "riemannian_constant_curvature":
        n = int(d.get("n", 2))
        return riemannian_system(Constant(-float(d.get("kappa", 1.0)) * np.eye(n)),
                                 float(d.get("a", 0.0)), float(d["b"]), label=preset)
    if preset == "flat":
        n = int(d.get("n", 2))
        return riemannian_system(Constant(np.zeros((n, n))), float(d.get("a", 0.0)), float(d["b"]), label=preset)
    return SymplecticSystemSpec.from_dict(d)


# -- runners ------------------------------------------------------------------


def _tol(scenario):
    t = scenario.get("tolerances", {})
    return Tolerance(t.get("kernel_tol", 1e-9), t.get("gap_tol", 1e-6))


def _run_system(sc, tol, step, seed, tables):
    X = build_system(sc["system"])
    rep = detect(X, step, tol, seed=seed)
    flow = morse_flow(rep, tol)
    tables["branches"] = _branch_rows(rep)
    tables["index_profile"] = [("t", "index")] + [(float(t), int(i)) for t, i in zip(flow.times, flow.index)]
    return {
        "conjugate": rep.to_dict(),
        "morse_flow": {"jumps": [list(j) for j in flow.jumps], "violations": flow.violations},
        "isolation": isolation_check(rep, tol),
    }, rep.quality


def _run_prescription(sc, tol, step, seed, tables):
    p = SingularityPrescription.from_dict(sc["prescription"])
    op = build_operator(p)
    b_eff = None
    if p.infinite:
        raise ScenarioError("prescription.b", "use a roundtrip scenario for infinite horizons")
    curve = prescribed_curve(p, op.A, b_eff)
    rep = detect(curve, step, tol, seed=seed)
    for c in rep.instants:
        k = int(np.argmin(np.abs(op.diagonal - c.t)))
        c.provenance = op.provenance[k]
    tables["branches"] = _branch_rows(rep)
    return {
        "operator": {"diagonal": op.diagonal.tolist(), "provenance": op.provenance, "flags": op.flags},
        "conjugate": rep.to_dict(),
    }, rep.quality


def _run_truncation(sc, tol, step, seed, tables):
    tr = sc["truncation"]
    study = truncation_study(diagonal_family, tr["dims"], tr.get("probes", [1.0]),
                             tr.get("eps", [0.05, 0.1]), h=step, tol=tol)
    tables["near_zero"] = [("N", "probe", "eps", "count")] + [
        (N, p, e, c) for (N, p, e), c in sorted(study.near_zero.items())
    ]
    return {"truncation": study.to_dict()}, {"gap_exponent": study.gap_exponent()}


def _run_morse(sc, tol, step, seed, tables):
    X = build_system(sc["system"])
    ms = sc.get("morse", {})
    t_end = float(ms.get("t_end", X.b))
    dens = ms.get("densities", [200, 400, 800])
    horizon = t_end - X.a
    per_mesh = []
    for dn in dens:
        m = max(2, int(math.ceil(dn * horizon)))
        idx, nul = index_of_form(discretize(X, t_end, m), tol)
        per_mesh.append({"density": dn, "m": m, "index": idx, "nullity": nul})
    stable = len({(r["index"], r["nullity"]) for r in per_mesh}) == 1
    rep = detect(X, step, tol, seed=seed)
    inside = [c for c in rep.instants if c.t < t_end]
    npts = int(ms.get("profile_points", 20))
    ts = np.linspace(X.a + horizon / npts, t_end, npts)
    prof = index_curve(X, dens[0], ts, tol)
    tables["index_profile"] = [("t", "index", "nullity")] + [
        (float(t), int(i), int(z)) for t, i, z in zip(prof.t, prof.index, prof.nullity)
    ]
    return {
        "meshes": per_mesh,
        "stable": stable,
        "index": per_mesh[-1]["index"],
        "detector_total_multiplicity": int(sum(c.multiplicity for c in inside)),
        "theorem_holds": stable and per_mesh[-1]["index"] == sum(c.multiplicity for c in inside),
        "profile": {"t": prof.t.tolist(), "index": prof.index.tolist(), "nondecreasing": prof.nondecreasing},
        "instants": [c.to_dict() for c in inside],
    }, {"stable": stable, "symplectic_drift": rep.quality["symplectic_drift"]}


def _run_roundtrip(sc, tol, step, seed, tables):
    p = SingularityPrescription.from_dict(sc["prescription"])
    res = full_pipeline(p, a=float(sc.get("a", p.c - 0.5)), h=step, tol=tol)
    tables["branches"] = _branch_rows(res.report)
    return {
        "match": res.matched,
        "expected": [{"t": t, "multiplicity": m, "provenance": prov} for t, m, prov in res.expected],
        "conjugate": res.report.to_dict(),
        "metadata": res.metadata,
    }, res.report.quality


RUNNERS = {
    "system": _run_system,
    "prescription": _run_prescription,
    "truncation_family": _run_truncation,
    "morse": _run_morse,
    "roundtrip": _run_roundtrip,
}


def _branch_rows(rep):
    if not rep.windows:
        return []
    n = rep.windows[0].T.shape[-1]
    rows = [("window", "t") + tuple(f"lambda_{k}" for k in range(n))]
    for wi, (ts, lam) in enumerate(rep.branch_curves()):
        rows += [(wi, float(t)) + tuple(float(x) for x in row) for t, row in zip(ts, lam)]
    return rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return obj


def run_scenario(scenario, seed=None, step=None):
    """Execute a validated scenario; returns ``(report, tables)``."""
    sc = copy.deepcopy(scenario)
    if seed is not None:
        sc["seed"] = int(seed)
    if step is not None:
        sc.setdefault("grid", {})["step"] = float(step)
    validate_scenario(sc)
    tol = _tol(sc)
    h = float(sc.get("grid", {}).get("step", 1e-3))
    seed = int(sc.get("seed", 0))
    tables = {}
    t0 = time.perf_counter()
    result, quality = RUNNERS[sc["kind"]](sc, tol, h, seed, tables)
    report = {
        "schema_version": SCHEMA_VERSION,
        "artifact_version": __version__,
        "kind": sc["kind"],
        "scenario": sc,
        "result": result,
        "quality": quality,
        "wall_time": time.perf_counter() - t0,
    }
    return _jsonable(report), tables


def dumps_report(report):
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows):
    buf = io.StringIO()
    csv.writer(buf).writerows(rows)
    return buf.getvalue()


def load_scenario(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError("<file>", f"invalid JSON: {exc}") from None
    except OSError as exc:
        raise ScenarioError("<file>", str(exc)) from None


def catalog_text():
    lines = ["scenario kinds:"]
    lines += [f"  {k}: {v}" for k, v in sorted(SCENARIO_KINDS.items())]
    lines.append("system presets:")
    lines += [f"  {k}: {v}" for k, v in sorted(SYSTEM_PRESETS.items())]
    lines.append("component kinds:")
    lines += [f"  {k}: {v}" for k, v in sorted(CATALOG.items())]
    return "\n".join(lines) + "\n"


def build_parser():
    ap = argparse.ArgumentParser(prog="conjflow", description="Conjugate instants of symplectic systems.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and write a JSON report")
    r.add_argument("scenario")
    r.add_argument("--out", default=".", help="output directory (default: current)")
    r.add_argument("--csv", action="store_true", help="also write CSV curve dumps")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--step", type=float, default=None, help="override grid.step")
    v = sub.add_parser("validate", help="check a scenario file against the schema")
    v.add_argument("scenario")
    sub.add_parser("catalog", help="list scenario kinds, presets and component kinds")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "catalog":
            sys.stdout.write(catalog_text())
            return 0
        scenario = load_scenario(args.scenario)
        if args.command == "validate":
            validate_scenario(scenario)
            print("ok")
            return 0
        report, tables = run_scenario(scenario, seed=args.seed, step=args.step)
        out = Path(args.out)
        name = scenario.get("name") or Path(args.scenario).stem
        _atomic_write(out / f"{name}.json", dumps_report(report))
        if args.csv or scenario.get("outputs", {}).get("csv"):
            for key, rows in tables.items():
                if rows:
                    _atomic_write(out / f"{name}.{key}.csv", _csv_text(rows))
        print(out / f"{name}.json")
        return 0
    except ScenarioError as exc:
        print(f"error: invalid scenario: {exc}", file=sys.stderr)
        return 2
    except QualityError as exc:
        print(f"error: quality failure [{exc.metric}]: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
