"""Library of regression functions, noise laws and covariate laws for simulations.

Every law declares the constants the band theory needs: density bounds
``c_X <= f_X <= C_X``, variance bounds ``c_sigma2 <= sigma^2 <= C_sigma2``,
the finite moment order ``nu`` and, for regression functions, a Hoelder
exponent and constant.  These are known in closed form, never estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np

from .grid import Grid


class ConfigError(ValueError):
    pass


def _take(params: dict, allowed: dict, what: str) -> dict:
    unknown = set(params) - set(allowed) - {"id"}
    if unknown:
        raise ConfigError(f"unknown {what} parameter(s): {sorted(unknown)}")
    return {k: params.get(k, default) for k, default in allowed.items()}


# -- regression functions -----------------------------------------------------


class RegressionFunction:
    """Callable ``m`` on ``(n, dim)`` arrays with declared regularity.

    ``alpha``/``holder_const`` are ``None`` for grid-aligned step functions,
    which are not Hoelder continuous but have zero approximation error.
    """

    alpha: float | None = None
    holder_const: float | None = None
    sup_norm: float = 0.0
    grid_aligned: bool = False

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PiecewiseConstant(RegressionFunction):
    grid_aligned = True

    def __init__(self, grid: Grid, levels: np.ndarray):
        self.grid = grid
        self.levels = np.asarray(levels, dtype=float)
        if self.levels.shape != (grid.cell_count,):
            raise ConfigError(f"piecewise_constant needs {grid.cell_count} levels")
        self.sup_norm = float(np.max(np.abs(self.levels)))

    def __call__(self, x):
        return self.levels[self.grid.locate(x)]


class Affine(RegressionFunction):
    alpha = 1.0

    def __init__(self, intercept: float, slope):
        self.intercept = float(intercept)
        self.slope = np.asarray(slope, dtype=float)
        # sup over corners of the cube
        self.sup_norm = abs(self.intercept) + float(np.sum(np.abs(self.slope)))
        self.holder_const = max(self.sup_norm, float(np.linalg.norm(self.slope)))

    def __call__(self, x):
        return self.intercept + np.asarray(x, dtype=float) @ self.slope


class HolderBump(RegressionFunction):
    """``C_H * min_i |x_i - 1/2|^alpha``, Hoelder with exponent ``alpha`` and constant ``C_H``."""

    def __init__(self, alpha: float, holder_const: float):
        if not 0.0 < alpha <= 1.0 or holder_const <= 0.0:
            raise ConfigError("holder_bump needs alpha in (0, 1] and holder_const > 0")
        self.alpha = float(alpha)
        self.holder_const = float(holder_const)
        self.sup_norm = self.holder_const * 0.5**self.alpha

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.holder_const * np.min(np.abs(x - 0.5), axis=1) ** self.alpha


def default_levels(cell_count: int, amplitude: float = 1.0) -> np.ndarray:
    return amplitude * np.array([(c % 3) - 1.0 for c in range(cell_count)])


def make_regression(spec: dict, grid: Grid) -> RegressionFunction:
    kind = spec.get("id")
    if kind == "piecewise_constant":
        prm = _take(spec, {"levels": None, "amplitude": 1.0}, kind)
        levels = prm["levels"] if prm["levels"] is not None else default_levels(grid.cell_count, prm["amplitude"])
        return PiecewiseConstant(grid, levels)
    if kind == "affine":
        prm = _take(spec, {"intercept": 0.0, "slope": None}, kind)
        slope = prm["slope"] if prm["slope"] is not None else [1.0] * grid.dim
        if len(slope) != grid.dim:
            raise ConfigError("affine slope length must equal dim")
        return Affine(prm["intercept"], slope)
    if kind == "holder_bump":
        prm = _take(spec, {"alpha": 1.0, "holder_const": 1.0}, kind)
        return HolderBump(prm["alpha"], prm["holder_const"])
    raise ConfigError(f"unknown regression id {kind!r}")


# -- noise laws ----------------------------------------------------------------


class Noise:
    """Centered noise ``eps = sigma(X) * xi`` with ``E[xi] = 0``, ``Var[xi] = 1``."""

    nu: float = math.inf
    c_sigma2: float
    C_sigma2: float

    def sigma2(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def standard(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal(n)

    def sample(self, rng: np.random.Generator, x: np.ndarray) -> np.ndarray:
        xi = self.standard(rng, x.shape[0])
        return np.sqrt(self.sigma2(x)) * xi


class GaussianNoise(Noise):
    def __init__(self, sigma: float):
        if sigma < 0:
            raise ConfigError("sigma must be nonnegative")
        self.sigma = float(sigma)
        self.c_sigma2 = self.C_sigma2 = self.sigma**2

    def sigma2(self, x):
        return np.full(np.shape(x)[0], self.sigma**2)


class StudentTNoise(GaussianNoise):
    """Student-t with ``nu + 1`` degrees of freedom rescaled to variance ``sigma^2``.

    Moments of order ``< nu + 1`` are finite, so the ``nu``-th is.
    """

    def __init__(self, sigma: float, nu: int):
        super().__init__(sigma)
        if int(nu) != nu or nu < 4:
            raise ConfigError("student_t needs an integer nu >= 4")
        self.nu = int(nu)
        self.df = self.nu + 1
        self._scale = math.sqrt((self.df - 2.0) / self.df)

    def standard(self, rng, n):
        return self._scale * rng.standard_t(self.df, n)


class HeteroGaussianNoise(Noise):
    """Gaussian noise with ``sigma^2(x) = sigma0^2 * (1 + x_1) / 2``."""

    def __init__(self, sigma0: float):
        if sigma0 <= 0:
            raise ConfigError("sigma0 must be positive")
        self.sigma0 = float(sigma0)
        self.c_sigma2 = self.sigma0**2 / 2.0
        self.C_sigma2 = self.sigma0**2

    def sigma2(self, x):
        return self.sigma0**2 * (1.0 + np.asarray(x, dtype=float)[:, 0]) / 2.0


def make_noise(spec: dict) -> Noise:
    kind = spec.get("id")
    if kind == "gaussian":
        return GaussianNoise(**_take(spec, {"sigma": 1.0}, kind))
    if kind == "student_t":
        return StudentTNoise(**_take(spec, {"sigma": 1.0, "nu": 4}, kind))
    if kind == "hetero_gaussian":
        return HeteroGaussianNoise(**_take(spec, {"sigma0": 1.0}, kind))
    raise ConfigError(f"unknown noise id {kind!r}")


# -- covariate laws ------------------------------------------------------------


class Covariates:
    c_X: float
    C_X: float

    def density(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        raise NotImplementedError


class UniformCovariates(Covariates):
    def __init__(self, dim: int):
        self.c_X = self.C_X = 1.0

    def density(self, x):
        return np.ones(np.shape(x)[0])

    def sample(self, rng, n, dim):
        return rng.random((n, dim))


class BetaMixtureCovariates(Covariates):
    """Product law with per-axis density ``w + (1 - w) * 6 t (1 - t)``.

    The Beta(2, 2) component vanishes at the boundary, so the uniform weight
    ``w > 0`` supplies the lower bound ``c_X = w^dim``.
    """

    def __init__(self, dim: int, weight: float):
        if not 0.0 < weight <= 1.0:
            raise ConfigError("beta_mixture weight must lie in (0, 1]")
        self.weight = float(weight)
        self.c_X = self.weight**dim
        self.C_X = (self.weight + 1.5 * (1.0 - self.weight)) ** dim

    def density(self, x):
        x = np.asarray(x, dtype=float)
        w = self.weight
        return np.prod(w + (1.0 - w) * 6.0 * x * (1.0 - x), axis=1)

    def sample(self, rng, n, dim):
        use_uniform = rng.random((n, dim)) < self.weight
        u = rng.random((n, dim))
        b = rng.beta(2.0, 2.0, (n, dim))
        return np.where(use_uniform, u, b)


def make_covariates(spec: dict, dim: int) -> Covariates:
    kind = spec.get("id")
    if kind == "uniform":
        _take(spec, {}, kind)
        return UniformCovariates(dim)
    if kind == "beta_mixture":
        return BetaMixtureCovariates(dim, **_take(spec, {"weight": 0.5}, kind))
    raise ConfigError(f"unknown covariate id {kind!r}")


# -- scenario configuration ----------------------------------------------------

VARIANCE_MODES = ("oracle", "homoscedastic", "local")


@dataclass
class ScenarioConfig:
    n: int
    dim: int = 1
    inv_mesh: int | None = None
    regression: dict = field(default_factory=lambda: {"id": "piecewise_constant"})
    noise: dict = field(default_factory=lambda: {"id": "gaussian", "sigma": 1.0})
    covariates: dict = field(default_factory=lambda: {"id": "uniform"})
    beta: float = 0.1
    variance: str = "oracle"
    replications: int = 100
    seed: int = 0
    probes: int | None = None
    var_floor: float = 1e-8

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError("n must be a positive integer")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigError("dim must be a positive integer")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError("beta must lie in (0, 1)")
        if self.variance not in VARIANCE_MODES:
            raise ConfigError(f"variance must be one of {VARIANCE_MODES}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ConfigError("replications must be a positive integer")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        for name in ("regression", "noise", "covariates"):
            if not isinstance(getattr(self, name), dict) or "id" not in getattr(self, name):
                raise ConfigError(f"{name} must be an object with an 'id' field")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown scenario field(s): {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_(self, **changes) -> "ScenarioConfig":
        d = self.to_dict()
        d.update(changes)
        return ScenarioConfig.from_dict(d)


def undersmoothing_audit(n: int, grid: Grid, alpha: float | None, nu: float) -> dict:
    """Sizes of the two undersmoothing quantities; small values mean the regime holds."""
    logn = math.log(n)
    delta = grid.mesh
    bias_term = None if alpha is None else n * delta ** (2 * alpha + grid.dim) * logn**2
    moment_exp = 0.0 if math.isinf(nu) else 2.0 / nu
    gp_term = logn**5 / (grid.cell_volume * n ** (1.0 - moment_exp))
    warnings = []
    if bias_term is not None and bias_term >= 1.0:
        warnings.append(f"n*delta^(2alpha+p)*(log n)^2 = {bias_term:.3g} is not < 1")
    if gp_term >= 0.1:
        warnings.append(f"(log n)^5/(delta^p n^(1-2/nu)) = {gp_term:.3g} is not < 0.1")
    return {"bias_term": bias_term, "gaussian_term": gp_term, "warnings": warnings}


def assumption_audit(m: RegressionFunction, noise: Noise, cov: Covariates) -> dict:
    violations = []
    if not cov.c_X > 0 or cov.C_X < cov.c_X:
        violations.append("covariate density bounds")
    if not noise.c_sigma2 > 0 or noise.C_sigma2 < noise.c_sigma2:
        violations.append("noise variance bounds")
    if m.holder_const is not None and m.sup_norm > m.holder_const + 1e-12:
        violations.append("sup norm exceeds Hoelder constant")
    return {
        "c_X": cov.c_X,
        "C_X": cov.C_X,
        "c_sigma2": noise.c_sigma2,
        "C_sigma2": noise.C_sigma2,
        "alpha": m.alpha,
        "C_H": m.holder_const,
        "nu": None if math.isinf(noise.nu) else noise.nu,
        "violations": violations,
    }

