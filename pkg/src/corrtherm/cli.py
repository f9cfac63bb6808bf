"""Command-line experiment runner: ``corrtherm <task> --config <path>``."""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import math
import sys
import time
from fractions import Fraction
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import jsonschema
import numpy as np
from scipy.stats import kstest

from . import acceptance
from .correspondence import Correspondence, holder_diagnostic
from .entropy import entropy_report
from .errors import ConfigError, NumericError, PreconditionError, ResourceError
from .kernel import CylinderSpec, Kernel, cylinder_measure, sample_markov
from .operator import GridDensity, invariant_density
from .orbits import Potential, pressure_separated_lower, pressure_spanning_upper_sequence, pressure_via_growth

logger = logging.getLogger(__name__)

TASKS = ("pressure", "density", "entropy", "markov", "cylinders", "check")
EXIT_OK, EXIT_CHECK, EXIT_RESOURCE, EXIT_CONFIG = 0, 2, 3, 4

_number = {"type": "number"}
_generator_schema = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "circle_linear"}, "p": {"type": "integer"}, "c": {"type": ["number", "string"]}},
            "required": ["kind", "p"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "circle_perturbed"},
                "p": {"type": "integer"},
                "c": _number,
                "eps": _number,
            },
            "required": ["kind", "p", "eps"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "torus_linear"},
                "A": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
                "c": {"type": "array", "items": _number},
            },
            "required": ["kind", "A"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "task": {"enum": list(TASKS)},
        "generators": {"type": "array", "items": _generator_schema, "minItems": 1},
        "potential": {
            "type": "object",
            "properties": {"kind": {"enum": ["jacobian", "torus_measurable", "zero"]}, "c_E": {"type": ["number", "null"]}},
            "required": ["kind"],
            "additionalProperties": False,
        },
        "kernel": {
            "oneOf": [
                {"const": "uniform"},
                {
                    "type": "object",
                    "properties": {"weights": {"type": "array", "items": {"type": ["number", "string"]}}},
                    "required": ["weights"],
                    "additionalProperties": False,
                },
            ]
        },
        "x": {"type": ["number", "array"]},
        "n_min": {"type": "integer", "minimum": 1},
        "n_max": {"type": "integer", "minimum": 1},
        "epsilon": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "resolution": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "budget": {"type": ["integer", "null"], "minimum": 1},
        "probes": {"type": "integer", "minimum": 1},
        "steps": {"type": "integer", "minimum": 1},
        "burnin": {"type": "integer", "minimum": 0},
        "x0": {"type": ["number", "string", "array", "null"]},
        "partition_size": {"type": "integer", "minimum": 1},
        "word_length": {"type": "integer", "minimum": 1},
        "mode": {"enum": ["auto", "exact", "quadrature"]},
        "criteria": {"type": ["array", "null"], "items": {"enum": list(acceptance.CRITERIA)}},
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "potential": {"kind": "jacobian", "c_E": None},
    "kernel": "uniform",
    "x": 0.1,
    "n_min": 1,
    "n_max": 10,
    "epsilon": None,
    "resolution": 4096,
    "tol": 1e-10,
    "max_iter": 1000,
    "seed": acceptance.GOLDEN_SEED,
    "budget": None,
    "probes": 32,
    "steps": 100000,
    "burnin": 0,
    "x0": None,
    "partition_size": 16,
    "word_length": 2,
    "mode": "auto",
    "criteria": None,
}


def tool_version() -> str:
    try:
        return version("corrtherm")
    except PackageNotFoundError:
        return "unknown"


def resolve_config(raw: dict, task: str | None = None, seed: int | None = None) -> dict:
    """Validate ``raw`` against the schema and fill every default explicitly."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    cfg = copy.deepcopy(DEFAULTS)
    cfg.update(copy.deepcopy(raw))
    if isinstance(cfg["potential"], dict):
        cfg["potential"] = {"c_E": None, **cfg["potential"]}
    if task is not None:
        if "task" in raw and raw["task"] != task:
            raise ConfigError(f"config task {raw['task']!r} conflicts with command-line task {task!r}")
        cfg["task"] = task
    if "task" not in cfg:
        raise ConfigError("no task given")
    if seed is not None:
        cfg["seed"] = seed
    if cfg["task"] != "check" and "generators" not in cfg:
        raise ConfigError(f"task {cfg['task']!r} needs a 'generators' list")
    if cfg["n_min"] > cfg["n_max"]:
        raise ConfigError("n_min must not exceed n_max")
    return {key: cfg[key] for key in sorted(cfg)}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Fraction):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _root(cfg, T):
    x = cfg["x"]
    return float(x) if T.dim == 1 and not isinstance(x, list) else np.asarray(x, dtype=float)


def _potential(cfg) -> Potential:
    return Potential(cfg["potential"]["kind"], c_E=cfg["potential"].get("c_E"))


def task_pressure(cfg, T, out: Path, threads: int) -> dict:
    phi = _potential(cfg)
    n_min, n_max = cfg["n_min"], cfg["n_max"]
    x = _root(cfg, T)
    est, seq = pressure_via_growth(T, phi, x, n_min, n_max, budget=cfg["budget"], threads=threads)
    eps = cfg["epsilon"]
    if eps is None:
        eps = T.constants.eta if T.constants.coincidence_free else 0.1
    span = pressure_spanning_upper_sequence(T, phi, eps, n_max, budget=cfg["budget"], threads=threads)
    rows = [(n, seq[n - n_min], span[n - 1], seq[n - n_min]) for n in range(n_min, n_max + 1)]
    write_csv(out / "pressure.csv", ["n", "phi_n_log_over_n", "spanning_upper", "separated_lower"], rows)
    summary = {
        "pressure_estimate": est,
        "log_k": math.log(T.k),
        "spanning_upper": float(span[-1]),
        "separated_lower": pressure_separated_lower(T, phi, x, n_max, budget=cfg["budget"], threads=threads),
        "epsilon": eps,
    }
    if T.constants.coincidence_free:
        summary["constants"] = T.constants.to_dict()
        if T.dim == 1:
            summary["holder_C"] = holder_diagnostic(T)[1]
    return summary


def task_density(cfg, T, out: Path, threads: int) -> dict:
    res = invariant_density(T, _potential(cfg), cfg["resolution"], cfg["tol"], cfg["max_iter"])
    centers = res.Phi.centers
    vals = res.Phi.values.reshape(-1)
    if T.dim == 1:
        write_csv(out / "density.csv", ["cell_center", "phi_value"], zip(centers, vals))
    else:
        header = [f"cell_center_{i + 1}" for i in range(T.dim)] + ["phi_value"]
        write_csv(out / "density.csv", header, (tuple(c) + (v,) for c, v in zip(centers, vals)))
    summary = res.summary()
    write_json(out / "density_summary.json", summary)
    return summary


def task_entropy(cfg, T, out: Path, threads: int) -> dict:
    kernel = Kernel.from_config(cfg["kernel"], T.k)
    phi = _potential(cfg)
    mu = None
    if phi.kind == "jacobian" and not T.constant_jacobians:
        mu = invariant_density(T, phi, cfg["resolution"], cfg["tol"], cfg["max_iter"]).Phi
    report = entropy_report(
        T, phi, mu, kernel, m=cfg["partition_size"], n_max=cfg["n_max"], mode=cfg["mode"], resolution=cfg["resolution"]
    )
    write_json(out / "entropy.json", report.to_dict())
    write_csv(out / "entropy_rate.csv", ["n", "H_n_over_n"], ((n, r) for n, _, r in report.h_partition))
    return {
        "h_analytic": report.h_analytic,
        "h_partition_last": report.h_partition[-1][2],
        "h_extrapolated": report.h_extrapolated,
        "variational_lhs": report.variational_lhs,
        "pressure_rhs": report.pressure_rhs,
        "gap": report.extra["gap"],
    }


def _parse_x0(x0):
    if x0 is None:
        return None
    if isinstance(x0, str):
        return Fraction(x0)
    if isinstance(x0, list):
        return [Fraction(v) if isinstance(v, str) else v for v in x0]
    return x0


def task_markov(cfg, T, out: Path, threads: int) -> dict:
    kernel = Kernel.from_config(cfg["kernel"], T.k)
    sample = sample_markov(T, kernel, _parse_x0(cfg["x0"]), cfg["steps"], seed=cfg["seed"])
    burn = cfg["burnin"]
    pts = sample.points
    if T.dim == 1:
        rows = ((i, pts[i], sample.symbols[i] if i < len(sample.symbols) else "") for i in range(burn, len(pts)))
        write_csv(out / "trajectory.csv", ["step", "x", "symbol"], rows)
    else:
        header = ["step"] + [f"x{i + 1}" for i in range(T.dim)] + ["symbol"]
        rows = (
            (i, *pts[i], sample.symbols[i] if i < len(sample.symbols) else "") for i in range(burn, len(pts))
        )
        write_csv(out / "trajectory.csv", header, rows)
    summary = {"engine": sample.engine, "steps": cfg["steps"], "seed": cfg["seed"]}
    visited = sample.visited(burn)
    if T.dim == 1:
        summary["ks_uniform"] = float(kstest(visited, "uniform").statistic)
    else:
        summary["ks_uniform"] = [float(kstest(visited[:, i], "uniform").statistic) for i in range(T.dim)]
    return summary


def task_cylinders(cfg, T, out: Path, threads: int) -> dict:
    kernel = Kernel.from_config(cfg["kernel"], T.k)
    m, n = cfg["partition_size"], cfg["word_length"]
    rows, total = [], 0
    for word in itertools.product(range(m), repeat=n):
        v = cylinder_measure(None, kernel, T, CylinderSpec.uniform(m, word), mode=cfg["mode"], resolution=cfg["resolution"])
        total += v
        rows.append((" ".join(map(str, word)), float(v), str(v) if isinstance(v, Fraction) else ""))
    write_csv(out / "cylinders.csv", ["word", "measure", "exact"], rows)
    return {"words": len(rows), "total": float(total), "total_exact": str(total) if isinstance(total, Fraction) else None}


def task_check(cfg, T, out: Path, threads: int) -> dict:
    results = acceptance.run_suite(cfg["criteria"], threads=threads)
    for r in results:
        print(r.line())
    write_csv(
        out / "acceptance.csv",
        ["criterion", "expected", "observed", "tolerance", "seconds", "pass"],
        ((r.id, r.expected, r.observed, r.tolerance, round(r.seconds, 3), r.passed) for r in results),
    )
    return {"criteria": {r.id: r.to_dict() for r in results}, "all_passed": all(r.passed for r in results)}


TASK_FUNCS = {
    "pressure": task_pressure,
    "density": task_density,
    "entropy": task_entropy,
    "markov": task_markov,
    "cylinders": task_cylinders,
    "check": task_check,
}


def run(cfg: dict, out: Path, threads: int = 1) -> dict:
    """Execute a resolved config and write its artifacts plus ``manifest.json``."""
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "resolved_config.json", cfg)
    T = Correspondence.from_config(cfg) if "generators" in cfg else None
    t0 = time.perf_counter()
    summary = TASK_FUNCS[cfg["task"]](cfg, T, out, threads)
    manifest = {
        "config": cfg,
        "version": tool_version(),
        "wall_clock_seconds": time.perf_counter() - t0,
        "summary": summary,
    }
    if cfg["task"] == "check":
        manifest["checks"] = {cid: c["passed"] for cid, c in summary["criteria"].items()}
    write_json(out / "manifest.json", manifest)
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corrtherm", description=__doc__)
    parser.add_argument("task", choices=TASKS)
    parser.add_argument("--config", type=Path, help="JSON experiment config")
    parser.add_argument("--out", type=Path, default=Path("corrtherm-out"), help="output directory")
    parser.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        raw = {}
        if args.config is not None:
            try:
                raw = json.loads(args.config.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = resolve_config(raw, task=args.task, seed=args.seed)
        manifest = run(cfg, args.out, threads=args.threads)
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ConfigError, PreconditionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    if args.task == "check" and not manifest["summary"]["all_passed"]:
        return EXIT_CHECK
    print(json.dumps(manifest["summary"], indent=2, sort_keys=True, default=_json_default) if args.task != "check" else "")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
