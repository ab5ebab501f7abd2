"""Seeded Monte Carlo experiments for the histogram confidence bands.

A replication ``r`` of a scenario draws its covariates and noise from
counter-based streams keyed by ``(seed, r, stage)``.  Replications are
evaluated independently, possibly in worker processes, and reassembled in
replication order, so reports do not depend on the worker count.

Finite simulations only lower-bound coverage for the specific regression
function and sample size simulated; reports say so in ``summary.note``.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats

from . import __version__, rng
from .bands import build_band, covers_extremes, gaussian_max_cdf, probe_extremes, sup_error
from .estimators import Dataset, TauModel, cell_integrals, decompose, fit, tau_oracle, tau_plugin, variance_model
from .grid import Grid, inv_mesh_rule
from .scenarios import (
    ConfigError,
    ScenarioConfig,
    assumption_audit,
    make_covariates,
    make_noise,
    make_regression,
    undersmoothing_audit,
)

COVERAGE_NOTE = (
    "empirical coverage at one regression function and one sample size; "
    "a finite simulation lower-bounds the honest coverage only for this case"
)


class Scenario:
    """A ScenarioConfig resolved into concrete laws, grid and oracle quantities."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        inv_mesh = config.inv_mesh
        if inv_mesh is None:
            # the mesh rule needs the smoothness of m, which a step function lacks
            if config.regression["id"] == "piecewise_constant":
                raise ConfigError("inv_mesh is required for regression functions without a Hoelder exponent")
            alpha = make_regression(config.regression, Grid(config.dim, 1)).alpha
            inv_mesh = inv_mesh_rule(config.n, alpha, config.dim)
        self.grid = Grid(config.dim, inv_mesh)
        self.m = make_regression(config.regression, self.grid)
        self.noise = make_noise(config.noise)
        self.covariates = make_covariates(config.covariates, config.dim)
        self._tau_oracle = None
        self._extremes = None

    @property
    def probes(self) -> int:
        if self.config.probes is not None:
            return self.config.probes
        return 1 if self.m.grid_aligned else 8

    @property
    def tau_oracle(self) -> TauModel:
        if self._tau_oracle is None:
            self._tau_oracle = tau_oracle(self.grid, self.covariates.density, self.noise.sigma2) \
                if self.noise.c_sigma2 > 0 else _noise_free(self.grid, self.covariates.density)
        return self._tau_oracle

    @property
    def extremes(self) -> tuple[np.ndarray, np.ndarray]:
        if self._extremes is None:
            self._extremes = probe_extremes(self.grid, self.m, self.probes)
        return self._extremes

    def audit(self) -> dict:
        audit = assumption_audit(self.m, self.noise, self.covariates)
        audit["undersmoothing"] = undersmoothing_audit(self.config.n, self.grid, self.m.alpha, self.noise.nu)
        return audit


def _noise_free(grid: Grid, density) -> TauModel:
    # zero noise: infinite precision, so every radius is zero
    (p_cell,) = cell_integrals(grid, [density])
    J = grid.cell_count
    return TauModel(grid, np.full(J, np.inf), np.ones(J, dtype=bool), p_cell=p_cell)


@dataclass
class Truth:
    m_values: np.ndarray
    eps: np.ndarray
    cells: np.ndarray
    tau: TauModel


def _as_scenario(config) -> Scenario:
    if isinstance(config, Scenario):
        return config
    if isinstance(config, dict):
        config = ScenarioConfig.from_dict(config)
    return Scenario(config)


def generate(config, r: int) -> tuple[Dataset, Truth]:
    """Draw replication ``r``: ``n`` i.i.d. pairs with ``Y = m(X) + eps``."""
    sc = _as_scenario(config)
    cfg = sc.config
    x = sc.covariates.sample(rng.stream(cfg.seed, r, rng.COVARIATES), cfg.n, cfg.dim)
    eps = sc.noise.sample(rng.stream(cfg.seed, r, rng.NOISE), x)
    m_values = np.asarray(sc.m(x), dtype=float)
    data = Dataset(x, m_values + eps)
    return data, Truth(m_values, eps, sc.grid.locate(x), sc.tau_oracle)


# -- per-replication tasks -----------------------------------------------------


def _coverage_task(sc: Scenario, r: int) -> dict:
    data, truth = generate(sc, r)
    hist = fit(sc.grid, data, cells=truth.cells)
    if sc.config.variance == "oracle":
        tau = truth.tau
    else:
        tau = tau_plugin(hist, variance_model(hist, data, sc.config.variance, sc.config.var_floor))
    band = build_band(hist, tau, sc.config.beta)
    m_min, m_max = sc.extremes
    return {
        "r": r,
        "covered": covers_extremes(band, m_min, m_max),
        "degenerate_cells": int(band.degenerate.sum()),
        "sup_error": sup_error(band.center, m_min, m_max),
    }


def _rate_task(sc: Scenario, r: int) -> dict:
    data, truth = generate(sc, r)
    hist = fit(sc.grid, data, cells=truth.cells)
    m_min, m_max = sc.extremes
    return {"r": r, "sup_error": sup_error(hist.mean_y, m_min, m_max), "empty_cells": int(hist.empty.sum())}


def _gauss_task(sc: Scenario, r: int) -> dict:
    data, truth = generate(sc, r)
    tau = truth.tau
    dec = decompose(sc.grid, data, sc.m, truth.eps, tau.p_cell, cells=truth.cells)
    stat = math.sqrt(data.n) * float(np.max(np.abs(np.sqrt(tau.tau) * dec.m_tilde_eps)))
    return {"r": r, "T": stat}


def phat_statistic(p_hat: np.ndarray, p_cell: np.ndarray) -> float:
    """``max_c |p_hat / p_cell - 1|``."""
    return float(np.max(np.abs(np.asarray(p_hat) / np.asarray(p_cell) - 1.0)))


def _phat_task(sc: Scenario, r: int) -> dict:
    cfg = sc.config
    x = sc.covariates.sample(rng.stream(cfg.seed, r, rng.COVARIATES), cfg.n, cfg.dim)
    count = np.bincount(sc.grid.locate(x), minlength=sc.grid.cell_count)
    return {"r": r, "max_rel_error": phat_statistic(count / cfg.n, sc.tau_oracle.p_cell)}


def _approx_task(sc: Scenario, r: int) -> dict:
    data, truth = generate(sc, r)
    dec = decompose(sc.grid, data, sc.m, truth.eps, sc.tau_oracle.p_cell, cells=truth.cells)
    m_min, m_max = sc.extremes
    all_nonempty = not dec.empty.any()
    return {
        "r": r,
        "all_nonempty": bool(all_nonempty),
        "approx_sup": sup_error(dec.m_hat_m, m_min, m_max) if all_nonempty else None,
    }


TASKS = {
    "coverage": _coverage_task,
    "rate": _rate_task,
    "gauss-approx": _gauss_task,
    "phat": _phat_task,
    "approx-error": _approx_task,
}

_SCENARIO_CACHE: dict[str, Scenario] = {}


def _run_chunk(task: str, config: dict, start: int, stop: int) -> list[dict]:
    key = json.dumps(config, sort_keys=True)
    sc = _SCENARIO_CACHE.get(key)
    if sc is None:
        sc = _SCENARIO_CACHE[key] = Scenario(ScenarioConfig.from_dict(config))
    fn = TASKS[task]
    return [fn(sc, r) for r in range(start, stop)]


def run_replications(task: str, config: ScenarioConfig, workers: int = 1) -> list[dict]:
    """Evaluate all replications of ``config``; records come back in replication order."""
    R = config.replications
    cfg = config.to_dict()
    workers = max(1, int(workers))
    if workers == 1 or R == 1:
        return _run_chunk(task, cfg, 0, R)
    n_chunks = min(R, 4 * workers)
    bounds = np.linspace(0, R, n_chunks + 1).astype(int)
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        futures = [pool.submit(_run_chunk, task, cfg, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        records = [rec for fut in futures for rec in fut.result()]
    return records


# -- reports -------------------------------------------------------------------


@dataclass
class ExperimentReport:
    kind: str
    config: Any
    records: list
    summary: dict
    checks: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self, include_meta: bool = True) -> dict:
        d = {
            "schema": 1,
            "kind": self.kind,
            "config": self.config,
            "summary": self.summary,
            "checks": self.checks,
            "passed": self.passed,
            "records": self.records,
        }
        if include_meta:
            d["meta"] = self.meta
        return d

    def to_json(self, include_meta: bool = True) -> str:
        return json.dumps(jsonable(self.to_dict(include_meta)), indent=1, allow_nan=False)

    def write_records_csv(self, path) -> None:
        rows = _flat_records(self.records)
        if not rows:
            return
        keys = list(rows[0])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(rows)


def _flat_records(records: list) -> list[dict]:
    rows = []
    for rec in records:
        if "records" in rec:  # grouped by sample size
            for sub in rec["records"]:
                rows.append({"n": rec["n"], **sub})
        else:
            rows.append(rec)
    return rows


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _meta(workers: int, t0: float) -> dict:
    return {"workers": workers, "elapsed_seconds": time.perf_counter() - t0, "version": __version__}


def _check(name: str, value, threshold, passed: bool) -> dict:
    return {"name": name, "value": value, "threshold": threshold, "passed": bool(passed)}


def _warn_audit(sc: Scenario, audit: dict) -> None:
    for msg in audit["violations"]:
        warnings.warn(f"assumption violated: {msg}", stacklevel=3)
    if not sc.m.grid_aligned and sc.m.alpha is not None:
        for msg in audit["undersmoothing"]["warnings"]:
            warnings.warn(f"undersmoothing regime not reached: {msg}", stacklevel=3)


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


def coverage_experiment(config: ScenarioConfig, workers: int = 1, thresholds: dict | None = None) -> ExperimentReport:
    """Empirical probability that the band contains ``m`` at every probe point."""
    t0 = time.perf_counter()
    sc = Scenario(config)
    audit = sc.audit()
    _warn_audit(sc, audit)
    records = run_replications("coverage", config, workers)
    R = len(records)
    k = sum(rec["covered"] for rec in records)
    cov = k / R
    lo, hi = clopper_pearson(k, R)
    degenerate = sum(rec["degenerate_cells"] > 0 for rec in records)
    summary = {
        "coverage": cov,
        "covered": k,
        "replications": R,
        "nominal": 1.0 - config.beta,
        "ci95": [lo, hi],
        "mc_half_width": 1.96 * math.sqrt(max(cov * (1 - cov), 1e-300) / R),
        "degenerate_replications": degenerate,
        "cells": sc.grid.cell_count,
        "inv_mesh": sc.grid.inv_mesh,
        "probes_per_axis": sc.probes,
        "audit": audit,
        "note": COVERAGE_NOTE,
    }
    checks = []
    thresholds = thresholds or {}
    if "min_coverage" in thresholds:
        checks.append(_check("min_coverage", cov, thresholds["min_coverage"], cov >= thresholds["min_coverage"]))
    return ExperimentReport("coverage", config.to_dict(), records, summary, checks, _meta(workers, t0))


def fit_loglog_slope(xs, ys, level: float = 0.95) -> dict:
    res = stats.linregress(np.log(xs), np.log(ys))
    df = len(xs) - 2
    half = float(stats.t.ppf(0.5 + level / 2, df) * res.stderr) if df > 0 else math.inf
    return {"slope": float(res.slope), "intercept": float(res.intercept), "stderr": float(res.stderr),
            "ci95": [float(res.slope) - half, float(res.slope) + half]}


def rate_experiment(configs: list[ScenarioConfig], workers: int = 1, thresholds: dict | None = None) -> ExperimentReport:
    """Median probe-grid sup error per sample size and its log-log slope against ``n / log n``."""
    t0 = time.perf_counter()
    if len(configs) < 2:
        raise ConfigError("rate experiment needs at least two sample sizes")
    ns = [c.n for c in configs]
    if len(configs) < 4 or max(ns) / min(ns) < 100:
        warnings.warn("rate experiment should cover >= 4 sample sizes spanning >= 2 decades", stacklevel=2)
    groups = []
    medians = []
    alpha = None
    for cfg in configs:
        sc = Scenario(cfg)
        alpha = sc.m.alpha
        recs = run_replications("rate", cfg, workers)
        med = float(np.median([rec["sup_error"] for rec in recs]))
        medians.append(med)
        groups.append({"n": cfg.n, "inv_mesh": sc.grid.inv_mesh, "median_sup_error": med,
                       "audit": sc.audit(), "records": recs})
    dim = configs[0].dim
    xs = np.array([n / math.log(n) for n in ns])
    summary = {"n_values": ns, "median_sup_error": medians}
    checks = []
    if all(m > 0 for m in medians):
        summary.update(fit_loglog_slope(xs, np.array(medians)))
    else:
        summary.update({"slope": None, "ci95": None})
    if alpha is not None:
        summary["theoretical_slope"] = -alpha / (2 * alpha + dim)
    thresholds = thresholds or {}
    if "slope_tol" in thresholds:
        target = thresholds.get("slope_target", summary.get("theoretical_slope"))
        slope = summary["slope"]
        ok = slope is not None and target is not None and abs(slope - target) <= thresholds["slope_tol"]
        checks.append(_check("slope", slope, [target, thresholds["slope_tol"]], ok))
    base = configs[0].to_dict()
    base.pop("n")
    config = {"scenario": base, "n_values": ns}
    return ExperimentReport("rate", config, groups, summary, checks, _meta(workers, t0))


def ks_distance(sample, cdf) -> float:
    return float(stats.kstest(np.asarray(sample), cdf).statistic)


def gauss_approx_experiment(config: ScenarioConfig, workers: int = 1, thresholds: dict | None = None) -> ExperimentReport:
    """KS distance between the standardized noise maximum and ``(2 Phi(t) - 1)^J``."""
    t0 = time.perf_counter()
    sc = Scenario(config)
    audit = sc.audit()
    records = run_replications("gauss-approx", config, workers)
    J = sc.grid.cell_count
    T = np.array([rec["T"] for rec in records])
    res = stats.kstest(T, lambda t: gaussian_max_cdf(t, J))
    summary = {"ks_distance": float(res.statistic), "ks_pvalue": float(res.pvalue), "cells": J,
               "n": config.n, "replications": len(records), "audit": audit}
    checks = []
    thresholds = thresholds or {}
    if "max_ks" in thresholds:
        checks.append(_check("max_ks", summary["ks_distance"], thresholds["max_ks"],
                             summary["ks_distance"] <= thresholds["max_ks"]))
    return ExperimentReport("gauss-approx", config.to_dict(), records, summary, checks, _meta(workers, t0))


def phat_experiment(configs: list[ScenarioConfig], workers: int = 1, thresholds: dict | None = None) -> ExperimentReport:
    """Median of ``max_c |p_hat / p_cell - 1|`` times ``(log n)^(3/2)`` per sample size.

    The scaled statistic should decrease over the two largest decades of ``n``.
    Sample sizes with ``n * delta^p < 10`` are flagged out of regime.
    """
    t0 = time.perf_counter()
    groups = []
    for cfg in sorted(configs, key=lambda c: c.n):
        sc = Scenario(cfg)
        recs = run_replications("phat", cfg, workers)
        med = float(np.median([rec["max_rel_error"] for rec in recs]))
        groups.append({
            "n": cfg.n,
            "inv_mesh": sc.grid.inv_mesh,
            "median_max_rel_error": med,
            "scaled": med * math.log(cfg.n) ** 1.5,
            "out_of_regime": cfg.n * sc.grid.cell_volume < 10,
            "records": recs,
        })
    n_max = groups[-1]["n"]
    tail = [g for g in groups if g["n"] * 100 >= n_max and not g["out_of_regime"]]
    scaled = [g["scaled"] for g in tail]
    decreasing = len(tail) >= 2 and all(b < a for a, b in zip(scaled, scaled[1:]))
    summary = {
        "n_values": [g["n"] for g in groups],
        "scaled": [g["scaled"] for g in groups],
        "out_of_regime": [g["n"] for g in groups if g["out_of_regime"]],
        "tail_n_values": [g["n"] for g in tail],
        "decreasing": decreasing,
    }
    checks = []
    if (thresholds or {}).get("decreasing"):
        checks.append(_check("decreasing", decreasing, True, decreasing))
    base = configs[0].to_dict()
    base.pop("n")
    return ExperimentReport("phat", {"scenario": base, "n_values": summary["n_values"]}, groups, summary,
                            checks, _meta(workers, t0))


def approx_error_experiment(config: ScenarioConfig, workers: int = 1) -> ExperimentReport:
    """Check ``sup |m_hat^(m) - m| <= C_H (sqrt(p) delta)^alpha`` on replications with no empty cell."""
    t0 = time.perf_counter()
    sc = Scenario(config)
    if sc.m.alpha is None:
        raise ConfigError("approx-error experiment needs a Hoelder regression function")
    bound = sc.m.holder_const * sc.grid.cell_diameter() ** sc.m.alpha
    records = run_replications("approx-error", config, workers)
    used = [rec for rec in records if rec["all_nonempty"]]
    worst = max((rec["approx_sup"] for rec in used), default=None)
    ok = bool(used) and worst <= bound + 1e-10
    summary = {"bound": bound, "max_approx_sup": worst, "replications_used": len(used),
               "replications": len(records), "probes_per_axis": sc.probes}
    checks = [_check("approx_bound", worst, bound + 1e-10, ok)]
    return ExperimentReport("approx-error", config.to_dict(), records, summary, checks, _meta(workers, t0))


def default_workers() -> int:
    env = os.environ.get("HISTOBAND_THREADS")
    return int(env) if env else 1
