"""Exact binomial moments by enumeration.

Used to check two facts about ``B ~ Bin(n, p)``: central moments grow like
``(np)^(q/2)`` and the truncated inverse moment
``E[1{B > 0} (1/B - 1/(np))^q]`` decays like ``(np)^(-3q/2)``.  Weights are
formed in log space so that ``n`` up to ``1e5`` does not underflow.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy import special

MAX_N = 100_000
TREND_FACTOR = 1.2


@dataclass(frozen=True)
class BinomSpec:
    n: int
    prob: float
    order: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if self.n > MAX_N:
            raise ValueError(f"n={self.n} exceeds the enumeration limit {MAX_N}")
        if not 0.0 < self.prob <= 1.0:
            raise ValueError(f"prob must lie in (0, 1], got {self.prob!r}")
        if int(self.order) != self.order or self.order < 2:
            raise ValueError(f"order must be an integer > 1, got {self.order!r}")


def _weights(n: int, prob: float) -> np.ndarray:
    k = np.arange(n + 1, dtype=float)
    logw = special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)
    logw = logw + special.xlogy(k, prob) + special.xlog1py(n - k, -prob)
    return np.exp(logw)


def central_moment_exact(spec: BinomSpec) -> float:
    """``E[(B - np)^q]`` by summing over ``k = 0..n``."""
    n, p, q = int(spec.n), float(spec.prob), int(spec.order)
    k = np.arange(n + 1, dtype=float)
    terms = _weights(n, p) * (k - n * p) ** q
    return math.fsum(terms.tolist())


def truncated_inverse_moment(spec: BinomSpec) -> float:
    """``E[1{B > 0} (1/B - 1/(np))^q]`` by summing over ``k = 1..n``."""
    n, p, q = int(spec.n), float(spec.prob), int(spec.order)
    k = np.arange(1, n + 1, dtype=float)
    terms = _weights(n, p)[1:] * (1.0 / k - 1.0 / (n * p)) ** q
    return math.fsum(terms.tolist())


def inverse_decomposition_residual(k: int, mean: float) -> float:
    """Relative gap between ``1/k - 1/mean`` and its three-term expansion in ``mean - k``."""
    d = mean - k
    lhs = 1.0 / k - 1.0 / mean
    rhs = d / mean**2 + d**2 / mean**3 + d**3 / (k * mean**3)
    scale = max(abs(lhs), abs(d / mean**2), abs(d**2 / mean**3), abs(d**3 / (k * mean**3)), 1e-300)
    return abs(lhs - rhs) / scale


def _decade(mean: float) -> int:
    return int(math.floor(math.log10(mean)))


def trend_verdict(points: list[dict], key: str = "ratio") -> dict:
    """Compare the largest decade of ``np`` with the middle one.

    The verdict is ``"bounded"`` when the max ratio in the top decade is at
    most ``TREND_FACTOR`` times the max in the middle decade.
    """
    by_decade = defaultdict(list)
    for pt in points:
        by_decade[_decade(pt["np"])].append(pt[key])
    decades = sorted(by_decade)
    maxima = {str(d): max(by_decade[d]) for d in decades}
    if len(decades) < 2:
        return {"decade_max": maxima, "verdict": "insufficient", "top_over_middle": None}
    top = decades[-1]
    middle = decades[(len(decades) - 1) // 2] if len(decades) > 2 else decades[0]
    ratio = max(by_decade[top]) / max(by_decade[middle])
    return {
        "decade_max": maxima,
        "top_decade": top,
        "middle_decade": middle,
        "top_over_middle": ratio,
        "verdict": "bounded" if ratio <= TREND_FACTOR else "growing",
    }


DEFAULT_N = [50 * 2**i for i in range(7)]  # 50 .. 3200
DEFAULT_P = [0.05, 0.1, 0.2]
DEFAULT_Q = [2, 4]
MIN_NP = 2.0


def _nonincreasing_tail(points: list[dict], np_min: float, rtol: float = 1e-12) -> bool:
    """Ratios are non-increasing in ``np`` (up to rounding) along every fixed-``p`` path once ``np >= np_min``."""
    for p in {pt["p"] for pt in points}:
        path = sorted((pt for pt in points if pt["p"] == p and pt["np"] >= np_min), key=lambda pt: pt["np"])
        if any(b["ratio"] > a["ratio"] * (1.0 + rtol) for a, b in zip(path, path[1:])):
            return False
    return True


def _sweep(n_values, p_values, q_values, value_fn, exponent_fn, min_np: float) -> dict:
    report = {"points": [], "excluded": [], "per_order": {}}
    for q in q_values:
        pts = []
        for n in n_values:
            for p in p_values:
                mean = n * p
                if mean < min_np:
                    report["excluded"].append({"n": n, "p": p, "q": q, "np": mean, "reason": f"np < {min_np:g}"})
                    continue
                value = value_fn(BinomSpec(n, p, q))
                ratio = value / mean ** exponent_fn(q)
                pts.append({"n": n, "p": p, "q": q, "np": mean, "value": value, "ratio": ratio})
        report["points"].extend(pts)
        if pts:
            report["per_order"][str(q)] = {
                "max_ratio": max(pt["ratio"] for pt in pts),
                "nonincreasing_beyond_np20": _nonincreasing_tail(pts, 20.0),
                **trend_verdict(pts),
            }
        else:
            report["per_order"][str(q)] = {"verdict": "insufficient"}
    verdicts = [v["verdict"] for v in report["per_order"].values()]
    ratios = [pt["ratio"] for pt in report["points"]]
    report["max_ratio"] = max(ratios) if ratios else None
    report["verdict"] = "bounded" if verdicts and all(v == "bounded" for v in verdicts) else (
        "growing" if "growing" in verdicts else "insufficient")
    return report


def inverse_moment_ratio_sweep(n_values=DEFAULT_N, p_values=DEFAULT_P, q_values=DEFAULT_Q, min_np: float = MIN_NP) -> dict:
    """Ratios of the truncated inverse moment to ``(np)^(-3q/2)`` over a grid of specs.

    Points with ``np < min_np`` are excluded and listed under ``"excluded"``.
    """
    return _sweep(n_values, p_values, q_values, truncated_inverse_moment, lambda q: -1.5 * q, min_np)


def central_moment_sweep(n_values=DEFAULT_N, p_values=DEFAULT_P, q_values=(2, 4, 6), min_np: float = MIN_NP) -> dict:
    """Ratios of the exact ``q``-th central moment to ``(np)^(q/2)``."""
    return _sweep(n_values, p_values, q_values, central_moment_exact, lambda q: 0.5 * q, min_np)


def verify_binomial(n_values=DEFAULT_N, p_values=DEFAULT_P, q_values=DEFAULT_Q, tol: float = 1e-10) -> dict:
    """Both sweeps plus the decomposition identity on every ``k = 1..n`` of the sweep."""
    central = central_moment_sweep(n_values, p_values, q_values)
    inverse = inverse_moment_ratio_sweep(n_values, p_values, q_values)
    worst = 0.0
    for n in n_values:
        for p in p_values:
            mean = n * p
            for k in range(1, n + 1):
                worst = max(worst, inverse_decomposition_residual(k, mean))
    identity_ok = worst <= tol
    return {
        "central_moment": central,
        "truncated_inverse_moment": inverse,
        "decomposition_identity": {"max_relative_error": worst, "tolerance": tol, "passed": identity_ok},
        "verdict": "bounded" if central["verdict"] == inverse["verdict"] == "bounded" else "growing",
        "passed": identity_ok and central["verdict"] == "bounded" and inverse["verdict"] == "bounded",
    }
