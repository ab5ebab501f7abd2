"""Uniform confidence bands around the histogram estimate.

The band radius on a cell is ``c * (tau * n)^(-1/2)`` where ``c`` is the
``1 - beta`` quantile of the maximum of ``J`` independent ``|N(0, 1)|``
variables and ``J`` is the number of cells.  Because the maxima factorize,

    P(max_j |Z_j| <= c) = (2 Phi(c) - 1)^J,

and the quantile has a closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special, stats

from .estimators import HistogramFit, TauModel
from .grid import Grid, GridError


@dataclass(frozen=True)
class QuantileSpec:
    cells: int
    beta: float

    def __post_init__(self):
        if isinstance(self.cells, bool) or int(self.cells) != self.cells or self.cells < 1:
            raise ValueError(f"cells must be a positive integer, got {self.cells!r}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta!r}")


def gaussian_max_quantile(spec: QuantileSpec | int, beta: float | None = None) -> float:
    """Solve ``(2 Phi(c) - 1)^J = 1 - beta`` for ``c``.

    Works through the upper tail so that large ``J`` keeps full precision:
    ``2 (1 - Phi(c)) = 1 - (1 - beta)^(1/J)``.
    """
    if not isinstance(spec, QuantileSpec):
        spec = QuantileSpec(int(spec), beta)
    two_tail = -math.expm1(math.log1p(-spec.beta) / spec.cells)
    return float(stats.norm.isf(0.5 * two_tail))


def gaussian_max_cdf(c, cells: int) -> np.ndarray:
    """``P(max of cells |Z_j| <= c)`` computed as ``exp(J * log1p(-erfc(c / sqrt 2)))``."""
    c = np.asarray(c, dtype=float)
    out = np.zeros_like(c)
    pos = c > 0
    out[pos] = np.exp(cells * np.log1p(-special.erfc(c[pos] / math.sqrt(2.0))))
    return out


@dataclass(frozen=True)
class ConfidenceBand:
    grid: Grid
    center: np.ndarray
    radius: np.ndarray
    degenerate: np.ndarray
    beta: float
    quantile: float
    n: int

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.radius

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.radius

    def at(self, points) -> tuple[np.ndarray, np.ndarray]:
        cells = self.grid.locate(points)
        return self.lower[cells], self.upper[cells]


def build_band(fit: HistogramFit, tau: TauModel, beta: float, quantile: float | None = None) -> ConfidenceBand:
    """Assemble the band from a fit and a cell precision model.

    Cells that are empty or where ``tau`` is undefined get an infinite radius
    and are flagged degenerate.  ``quantile`` overrides the Gaussian-max
    quantile when given.
    """
    if fit.grid != tau.grid:
        raise GridError("fit and tau model live on different grids")
    if quantile is None:
        quantile = gaussian_max_quantile(QuantileSpec(fit.grid.cell_count, beta))
    degenerate = fit.empty | ~tau.defined
    radius = np.full(fit.grid.cell_count, np.inf)
    ok = ~degenerate
    radius[ok] = quantile / np.sqrt(tau.tau[ok] * fit.n)
    return ConfidenceBand(
        grid=fit.grid,
        center=fit.mean_y.copy(),
        radius=radius,
        degenerate=degenerate,
        beta=float(beta),
        quantile=float(quantile),
        n=fit.n,
    )


def probe_extremes(grid: Grid, m: Callable, per_axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell min and max of ``m`` over the probe grid."""
    points, cells = grid.probe_points(per_axis)
    vals = np.asarray(m(points), dtype=float).reshape(grid.cell_count, -1)
    return vals.min(axis=1), vals.max(axis=1)


def covers_extremes(band: ConfidenceBand, m_min: np.ndarray, m_max: np.ndarray, degenerate_fails: bool = False) -> bool:
    if degenerate_fails and band.degenerate.any():
        return False
    ok = (m_max - band.center <= band.radius) & (band.center - m_min <= band.radius)
    return bool(ok.all())


def covers(band: ConfidenceBand, m: Callable, probe_points_per_axis: int = 8, degenerate_fails: bool = False) -> bool:
    """Whether ``m`` stays inside the band at every probe point.

    Degenerate cells have infinite radius and therefore cover, unless
    ``degenerate_fails`` is set.
    """
    m_min, m_max = probe_extremes(band.grid, m, probe_points_per_axis)
    return covers_extremes(band, m_min, m_max, degenerate_fails)


def sup_error(center: np.ndarray, m_min: np.ndarray, m_max: np.ndarray) -> float:
    """Probe-grid sup of ``|m_hat - m|`` for a cell-constant ``m_hat``."""
    return float(np.max(np.maximum(np.abs(m_max - center), np.abs(center - m_min))))
