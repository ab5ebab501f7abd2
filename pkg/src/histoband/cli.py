"""Command-line interface.

Exit codes: 0 success, 1 a configured threshold failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bands import QuantileSpec, build_band, gaussian_max_quantile
from .binomial import DEFAULT_N, DEFAULT_P, DEFAULT_Q, verify_binomial
from .estimators import (
    DEFAULT_VAR_FLOOR,
    Dataset,
    fit,
    p_hat,
    sigma2_local,
    tau_oracle,
    tau_plugin,
    variance_model,
)
from .grid import Grid, GridError
from .scenarios import ConfigError, ScenarioConfig, make_covariates, make_noise
from .simulation import (
    ExperimentReport,
    jsonable,
    coverage_experiment,
    gauss_approx_experiment,
    phat_experiment,
    rate_experiment,
)

SCHEMA = 1


class InputError(Exception):
    pass


def _num(v: float):
    """Finite floats as-is, infinities and NaN as JSON null."""
    v = float(v)
    return v if math.isfinite(v) else None


def read_csv(path) -> Dataset:
    """Read ``x1,...,xp,y`` rows; the dimension comes from the header."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise InputError("no data rows")
        header = [h.strip() for h in header]
        dim = len(header) - 1
        expected = [f"x{i + 1}" for i in range(dim)] + ["y"]
        if dim < 1 or header != expected:
            raise InputError(f"line 1: header must be {','.join(expected) if dim >= 1 else 'x1,...,xp,y'}")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != dim + 1:
                raise InputError(f"line {line}: expected {dim + 1} fields, got {len(row)}")
            try:
                vals = [float(f) for f in row]
            except ValueError:
                raise InputError(f"line {line}: non-numeric field") from None
            if not all(math.isfinite(v) for v in vals):
                raise InputError(f"line {line}: non-finite value")
            if any(v < 0.0 or v > 1.0 for v in vals[:dim]):
                raise InputError(f"line {line}: covariate outside [0, 1]")
            rows.append(vals)
    if not rows:
        raise InputError(f"no data rows (header gives p={dim})")
    arr = np.array(rows, dtype=float)
    return Dataset(arr[:, :dim], arr[:, dim])


def _write_json(obj, out) -> None:
    text = json.dumps(jsonable(obj), indent=1, allow_nan=False) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_fit(args) -> int:
    data = read_csv(args.csv)
    grid = Grid(data.dim, args.inv_mesh)
    hist = fit(grid, data)
    ph = p_hat(hist)
    s2, low = sigma2_local(hist, args.var_floor)
    cells = []
    for c in range(grid.cell_count):
        cells.append({
            "cell": c,
            "multi": list(grid.linear_to_multi(c)),
            "count": int(hist.count[c]),
            "m_hat": float(hist.mean_y[c]),
            "p_hat": float(ph[c]),
            "sigma2_local": None if hist.empty[c] else float(s2[c]),
            "empty": bool(hist.empty[c]),
            "low_count": bool(low[c]),
        })
    _write_json({"schema": SCHEMA, "dim": grid.dim, "inv_mesh": grid.inv_mesh, "n": data.n, "cells": cells}, args.out)
    return 0


def _load_json_arg(value: str):
    p = Path(value)
    try:
        text = p.read_text(encoding="utf-8") if p.exists() else value
        return json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read JSON from {value!r}: {exc}") from None


def _oracle_tau(grid: Grid, spec_arg: str):
    spec = _load_json_arg(spec_arg)
    if not isinstance(spec, dict):
        raise InputError("oracle spec must be a JSON object")
    unknown = set(spec) - {"schema", "covariates", "noise"}
    if unknown:
        raise InputError(f"unknown oracle spec field(s): {sorted(unknown)}")
    cov = make_covariates(spec.get("covariates", {"id": "uniform"}), grid.dim)
    noise = make_noise(spec.get("noise", {"id": "gaussian", "sigma": 1.0}))
    return tau_oracle(grid, cov.density, noise.sigma2)


def cmd_band(args) -> int:
    if not 0.0 < args.beta < 1.0:
        raise InputError("--beta must lie in (0, 1)")
    if args.variance == "oracle" and not args.oracle_spec:
        raise InputError("--variance oracle requires --oracle-spec")
    data = read_csv(args.csv)
    grid = Grid(data.dim, args.inv_mesh)
    hist = fit(grid, data)
    if args.variance == "oracle":
        tau = _oracle_tau(grid, args.oracle_spec)
    else:
        mode = "homoscedastic" if args.variance == "global" else "local"
        tau = tau_plugin(hist, variance_model(hist, data, mode, args.var_floor))
    band = build_band(hist, tau, args.beta)
    rows = []
    for c in range(grid.cell_count):
        lo, hi = grid.cell_box(c)
        rows.append({
            "cell": c,
            "cell_box": {"lower": lo.tolist(), "upper": hi.tolist()},
            "center": float(band.center[c]),
            "radius": _num(band.radius[c]),
            "lower": _num(band.lower[c]),
            "upper": _num(band.upper[c]),
            "degenerate": bool(band.degenerate[c]),
        })
    doc = {
        "schema": SCHEMA,
        "dim": grid.dim,
        "inv_mesh": grid.inv_mesh,
        "n": data.n,
        "cells_total": grid.cell_count,
        "beta": args.beta,
        "quantile": band.quantile,
        "variance": args.variance,
        "cells": rows,
    }
    if args.out:
        stem = args.out[:-5] if args.out.endswith(".json") else args.out
        _write_json(doc, stem + ".json")
        _write_band_csv(rows, grid.dim, stem + ".csv")
    else:
        _write_json(doc, None)
    print(f"c_delta(beta)={band.quantile:.6f} J={grid.cell_count} degenerate={int(band.degenerate.sum())}",
          file=sys.stderr)
    return 0


def _write_band_csv(rows, dim: int, path: str) -> None:
    header = ["cell"] + [f"lo{i + 1}" for i in range(dim)] + [f"hi{i + 1}" for i in range(dim)] + [
        "center", "lower", "upper", "degenerate"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
            w.writerow([r["cell"], *map(fmt, r["cell_box"]["lower"]), *map(fmt, r["cell_box"]["upper"]),
                        fmt(r["center"]), fmt(r["lower"]), fmt(r["upper"]), str(r["degenerate"]).lower()])


def cmd_quantile(args) -> int:
    try:
        spec = QuantileSpec(args.cells, args.beta)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    print(f"{gaussian_max_quantile(spec):.6f}")
    return 0


# -- simulate ------------------------------------------------------------------

EXPERIMENT_KEYS = {
    "coverage": {"schema", "kind", "scenario", "thresholds"},
    "gauss-approx": {"schema", "kind", "scenario", "thresholds"},
    "rate": {"schema", "kind", "scenario", "n_values", "thresholds"},
    "phat": {"schema", "kind", "scenario", "n_values", "thresholds"},
    "verify-binomial": {"schema", "kind", "n_values", "p_values", "q_values", "thresholds"},
}
THRESHOLD_KEYS = {
    "coverage": {"min_coverage"},
    "gauss-approx": {"max_ks"},
    "rate": {"slope_target", "slope_tol"},
    "phat": {"decreasing"},
    "verify-binomial": {"bounded", "identity_tol"},
}


def load_run_config(kind: str, path: str | None) -> dict:
    """Parse and validate a schema-versioned run configuration."""
    if path is None:
        if kind != "verify-binomial":
            raise ConfigError(f"simulate {kind} requires --config")
        return {"schema": SCHEMA}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("schema") != SCHEMA:
        raise ConfigError(f"config schema mismatch: expected {SCHEMA}, got {doc.get('schema')!r}")
    unknown = set(doc) - EXPERIMENT_KEYS[kind]
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    if "kind" in doc and doc["kind"] != kind:
        raise ConfigError(f"config is for {doc['kind']!r}, not {kind!r}")
    unknown = set(doc.get("thresholds", {})) - THRESHOLD_KEYS[kind]
    if unknown:
        raise ConfigError(f"unknown threshold(s): {sorted(unknown)}")
    if kind in ("rate", "phat") and not doc.get("n_values"):
        raise ConfigError(f"{kind} config needs n_values")
    if kind != "verify-binomial" and "scenario" not in doc:
        raise ConfigError("config needs a scenario")
    return doc


def _scenario(doc: dict, seed: int | None, n: int | None = None) -> ScenarioConfig:
    sc = dict(doc["scenario"])
    if n is not None:
        sc["n"] = n
    if seed is not None:
        sc["seed"] = seed
    return ScenarioConfig.from_dict(sc)


def run_experiment(kind: str, doc: dict, seed: int | None = None, workers: int = 1) -> ExperimentReport:
    thresholds = doc.get("thresholds", {})
    if kind == "coverage":
        return coverage_experiment(_scenario(doc, seed), workers, thresholds)
    if kind == "gauss-approx":
        return gauss_approx_experiment(_scenario(doc, seed), workers, thresholds)
    if kind == "rate":
        return rate_experiment([_scenario(doc, seed, n) for n in doc["n_values"]], workers, thresholds)
    if kind == "phat":
        return phat_experiment([_scenario(doc, seed, n) for n in doc["n_values"]], workers, thresholds)
    if kind == "verify-binomial":
        return _binomial_report(doc, workers)
    raise ConfigError(f"unknown experiment {kind!r}")


def _binomial_report(doc: dict, workers: int) -> ExperimentReport:
    t0 = time.perf_counter()
    n_values = doc.get("n_values", DEFAULT_N)
    p_values = doc.get("p_values", DEFAULT_P)
    q_values = doc.get("q_values", DEFAULT_Q)
    thresholds = doc.get("thresholds", {"bounded": True})
    tol = thresholds.get("identity_tol", 1e-10)
    res = verify_binomial(n_values, p_values, q_values, tol=tol)
    records = res["truncated_inverse_moment"]["points"]
    summary = {
        "verdict": res["verdict"],
        "central_moment": {k: v for k, v in res["central_moment"].items() if k != "points"},
        "truncated_inverse_moment": {k: v for k, v in res["truncated_inverse_moment"].items() if k != "points"},
        "central_moment_points": res["central_moment"]["points"],
        "decomposition_identity": res["decomposition_identity"],
    }
    checks = [{"name": "decomposition_identity", "value": res["decomposition_identity"]["max_relative_error"],
               "threshold": tol, "passed": res["decomposition_identity"]["passed"]}]
    if thresholds.get("bounded", True):
        checks.append({"name": "bounded", "value": res["verdict"], "threshold": "bounded",
                       "passed": res["verdict"] == "bounded"})
    config = {"n_values": list(n_values), "p_values": list(p_values), "q_values": list(q_values)}
    meta = {"workers": workers, "elapsed_seconds": time.perf_counter() - t0, "version": __version__}
    return ExperimentReport("verify-binomial", config, records, summary, checks, meta)


def resolve_workers(cli_value: int | None) -> int:
    env = os.environ.get("HISTOBAND_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise InputError(f"HISTOBAND_THREADS must be an integer, got {env!r}") from None
    else:
        value = cli_value if cli_value is not None else 1
    if value < 1:
        raise InputError("worker count must be positive")
    return value


def cmd_simulate(args) -> int:
    doc = load_run_config(args.experiment, args.config)
    workers = resolve_workers(args.workers)
    report = run_experiment(args.experiment, doc, args.seed, workers)
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.csv:
        report.write_records_csv(args.csv)
    for c in report.checks:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {c['name']}: value={c['value']} threshold={c['threshold']}", file=sys.stderr)
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="histoband", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the histogram estimator to a CSV file")
    p.add_argument("csv")
    p.add_argument("--inv-mesh", type=int, required=True)
    p.add_argument("--var-floor", type=float, default=DEFAULT_VAR_FLOOR)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("band", help="uniform confidence band for a CSV file")
    p.add_argument("csv")
    p.add_argument("--inv-mesh", type=int, required=True)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--variance", choices=["global", "local", "oracle"], default="global")
    p.add_argument("--oracle-spec", help="JSON file or inline JSON with covariates and noise laws")
    p.add_argument("--var-floor", type=float, default=DEFAULT_VAR_FLOOR)
    p.add_argument("--out", help="output stem; writes <stem>.json and <stem>.csv")
    p.set_defaults(func=cmd_band)

    p = sub.add_parser("quantile", help="quantile of the maximum of J independent |N(0,1)|")
    p.add_argument("--cells", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.set_defaults(func=cmd_quantile)

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment or the binomial checks")
    p.add_argument("experiment", choices=list(EXPERIMENT_KEYS))
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--csv", help="also write per-replication records as CSV")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ConfigError, GridError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
