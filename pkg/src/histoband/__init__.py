"""Histogram regression estimates with uniform confidence bands."""

__version__ = "0.1.0"

from .bands import ConfidenceBand, QuantileSpec, build_band, covers, gaussian_max_quantile
from .binomial import BinomSpec, central_moment_exact, inverse_moment_ratio_sweep, truncated_inverse_moment
from .estimators import (
    Dataset,
    HistogramFit,
    TauModel,
    VarianceModel,
    decompose,
    fit,
    p_hat,
    sigma2_global,
    sigma2_local,
    tau_oracle,
    tau_plugin,
)
from .grid import CellId, Grid, GridError, cell_box, cell_diameter, cell_of

__all__ = [
    "BinomSpec",
    "CellId",
    "ConfidenceBand",
    "Dataset",
    "Grid",
    "GridError",
    "HistogramFit",
    "QuantileSpec",
    "TauModel",
    "VarianceModel",
    "build_band",
    "cell_box",
    "cell_diameter",
    "cell_of",
    "central_moment_exact",
    "covers",
    "decompose",
    "fit",
    "gaussian_max_quantile",
    "inverse_moment_ratio_sweep",
    "p_hat",
    "sigma2_global",
    "sigma2_local",
    "tau_oracle",
    "tau_plugin",
    "truncated_inverse_moment",
]
