"""Histogram regression fit and the plug-in quantities built from it.

All per-cell arrays are indexed by the linear cell index of the grid.
Empty cells carry the value 0 for the regression estimate, but downstream
code should always consult ``empty`` rather than the value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid, GridError

DEFAULT_VAR_FLOOR = 1e-8

# 8-point Gauss-Legendre rule on [0, 1].
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        ys = np.asarray(self.ys, dtype=float).ravel()
        if xs.ndim != 2 or xs.shape[0] != ys.shape[0]:
            raise GridError(f"xs of shape {xs.shape} does not match {ys.shape[0]} responses")
        if ys.shape[0] < 1:
            raise GridError("dataset must contain at least one observation")
        if not (np.all(np.isfinite(xs)) and xs.min() >= 0.0 and xs.max() <= 1.0):
            raise GridError("covariates must lie in [0, 1]^p")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.ys.shape[0]

    @property
    def dim(self) -> int:
        return self.xs.shape[1]


@dataclass(frozen=True)
class HistogramFit:
    grid: Grid
    count: np.ndarray
    mean_y: np.ndarray
    mean_y2: np.ndarray
    empty: np.ndarray
    n: int

    def predict(self, points) -> np.ndarray:
        """Evaluate the piecewise-constant estimate at arbitrary points."""
        return self.mean_y[self.grid.locate(points)]


def _cell_means(count: np.ndarray, sums: np.ndarray) -> np.ndarray:
    out = np.zeros_like(sums)
    np.divide(sums, count, out=out, where=count > 0)
    return out


def fit(grid: Grid, data: Dataset, cells: np.ndarray | None = None) -> HistogramFit:
    """Cell-wise averages of ``Y`` and ``Y**2``.

    ``cells`` may pass precomputed ``grid.locate(data.xs)`` to avoid a second lookup.
    """
    if data.dim != grid.dim:
        raise GridError(f"data dimension {data.dim} does not match grid dimension {grid.dim}")
    if cells is None:
        cells = grid.locate(data.xs)
    J = grid.cell_count
    count = np.bincount(cells, minlength=J)
    sum_y = np.bincount(cells, weights=data.ys, minlength=J)
    sum_y2 = np.bincount(cells, weights=data.ys * data.ys, minlength=J)
    return HistogramFit(
        grid=grid,
        count=count,
        mean_y=_cell_means(count, sum_y),
        mean_y2=_cell_means(count, sum_y2),
        empty=count == 0,
        n=data.n,
    )


def p_hat(fit: HistogramFit) -> np.ndarray:
    """Empirical cell frequencies ``count / n``."""
    return fit.count / fit.n


@dataclass(frozen=True)
class VarianceModel:
    """Noise variance used for the band radius.

    ``mode`` is ``"homoscedastic"`` (one global value), ``"local"`` (one value
    per cell) or ``"oracle"`` (values supplied externally through ``tau_oracle``).
    """

    mode: str
    global_sigma2: float | None = None
    local_sigma2: np.ndarray | None = None
    low_count: np.ndarray | None = None
    floor: float = DEFAULT_VAR_FLOOR

    def __post_init__(self):
        if self.mode not in ("homoscedastic", "local", "oracle"):
            raise ValueError(f"unknown variance mode {self.mode!r}")
        if self.floor <= 0:
            raise ValueError("variance floor must be positive")


def sigma2_global(fit: HistogramFit, data: Dataset, floor: float = DEFAULT_VAR_FLOOR) -> float:
    """Mean squared residual of the histogram fit, clamped below at ``floor``."""
    resid = data.ys - fit.predict(data.xs)
    return max(float(np.mean(resid * resid)), floor)


def sigma2_local(fit: HistogramFit, floor: float = DEFAULT_VAR_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell variance estimate ``mean(Y^2) - mean(Y)^2`` clamped at ``floor``.

    Returns ``(sigma2, low_count)``; empty cells hold NaN and cells with fewer
    than two observations are flagged in ``low_count``.
    """
    raw = fit.mean_y2 - fit.mean_y**2
    sigma2 = np.where(fit.empty, np.nan, np.maximum(raw, floor))
    return sigma2, fit.count < 2


def variance_model(fit: HistogramFit, data: Dataset, mode: str, floor: float = DEFAULT_VAR_FLOOR) -> VarianceModel:
    if mode == "homoscedastic":
        return VarianceModel(mode, global_sigma2=sigma2_global(fit, data, floor), floor=floor)
    if mode == "local":
        local, low = sigma2_local(fit, floor)
        return VarianceModel(mode, local_sigma2=local, low_count=low, floor=floor)
    raise ValueError(f"cannot build a plug-in variance model for mode {mode!r}")


@dataclass(frozen=True)
class TauModel:
    grid: Grid
    tau: np.ndarray
    defined: np.ndarray
    p_cell: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        t = self.tau[self.defined]
        # +inf is allowed and means a noise-free cell
        if np.any(np.isnan(t)) or np.any(t <= 0):
            raise NumericError("tau must be positive on defined cells")


def tau_plugin(fit: HistogramFit, var: VarianceModel) -> TauModel:
    """Estimated cell precision ``p_hat / sigma2_hat``.

    Empty cells are undefined. In local mode cells with fewer than two
    observations are undefined as well, since their variance estimate is
    degenerate.
    """
    ph = p_hat(fit)
    defined = ~fit.empty
    if var.mode == "homoscedastic":
        tau = ph / var.global_sigma2
    elif var.mode == "local":
        defined = defined & ~var.low_count
        tau = np.divide(ph, var.local_sigma2, out=np.zeros_like(ph), where=defined)
    else:
        raise ValueError("tau_plugin needs a homoscedastic or local variance model")
    tau = np.where(defined, tau, 0.0)
    return TauModel(fit.grid, tau, defined)


def cell_integrals(grid: Grid, funcs: list[Callable[[np.ndarray], np.ndarray]], chunk: int = 4096) -> list[np.ndarray]:
    """Integrate each function over every cell with a tensor 8-point Gauss-Legendre rule.

    Functions take an ``(m, dim)`` array of points and return ``m`` values.
    """
    p = grid.dim
    mesh = np.meshgrid(*([_GL_NODES] * p), indexing="ij")
    unit_nodes = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*([_GL_WEIGHTS] * p), indexing="ij")
    unit_weights = np.prod(np.stack([w.ravel() for w in wmesh], axis=1), axis=1)
    corners = grid.lower_corners()
    h = grid.mesh
    volume = grid.cell_volume
    out = [np.empty(grid.cell_count) for _ in funcs]
    for start in range(0, grid.cell_count, chunk):
        c = corners[start:start + chunk]
        pts = (c[:, None, :] + h * unit_nodes[None, :, :]).reshape(-1, p)
        for k, f in enumerate(funcs):
            vals = np.asarray(f(pts), dtype=float).reshape(c.shape[0], -1)
            out[k][start:start + chunk] = volume * (vals @ unit_weights)
    return out


def tau_oracle(grid: Grid, f_x: Callable, sigma2: Callable) -> TauModel:
    """Cell precision ``p_cell^2 / s_cell`` from a known density and variance function.

    ``p_cell`` is the covariate mass of the cell and ``s_cell`` the integral of
    ``sigma2 * f_x`` over it.
    """
    p_cell, s_cell = cell_integrals(grid, [f_x, lambda t: sigma2(t) * f_x(t)])
    if np.any(p_cell <= 0) or np.any(s_cell <= 0):
        raise NumericError("oracle cell mass and variance integral must be positive")
    tau = p_cell**2 / s_cell
    return TauModel(grid, tau, np.ones(grid.cell_count, dtype=bool), p_cell=p_cell)


@dataclass(frozen=True)
class Decomposition:
    m_hat_m: np.ndarray
    m_hat_eps: np.ndarray
    m_tilde_eps: np.ndarray
    empty: np.ndarray


def decompose(grid: Grid, data: Dataset, m: Callable, eps, p_cell, cells: np.ndarray | None = None) -> Decomposition:
    """Split the histogram fit into its regression-function and noise parts.

    ``m_hat_m`` averages ``m(X_j)`` per cell, ``m_hat_eps`` averages the
    errors, and ``m_tilde_eps`` divides the error sums by ``n * p_cell``
    instead of the realized cell counts.
    """
    if p_cell is None:
        raise GridError("decompose needs the oracle cell masses p_cell")
    p_cell = np.asarray(p_cell, dtype=float)
    if p_cell.shape != (grid.cell_count,):
        raise GridError("p_cell must have one entry per cell")
    eps = np.asarray(eps, dtype=float)
    if cells is None:
        cells = grid.locate(data.xs)
    J = grid.cell_count
    count = np.bincount(cells, minlength=J)
    m_vals = np.asarray(m(data.xs), dtype=float)
    sum_eps = np.bincount(cells, weights=eps, minlength=J)
    return Decomposition(
        m_hat_m=_cell_means(count, np.bincount(cells, weights=m_vals, minlength=J)),
        m_hat_eps=_cell_means(count, sum_eps),
        m_tilde_eps=sum_eps / (data.n * p_cell),
        empty=count == 0,
    )
