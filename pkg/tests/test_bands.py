import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from histoband.bands import (
    QuantileSpec,
    build_band,
    covers,
    gaussian_max_cdf,
    gaussian_max_quantile,
    probe_extremes,
)
from histoband.estimators import Dataset, TauModel, fit, tau_oracle
from histoband.grid import Grid, GridError

# Reference quantiles from mpmath bisection on erf(c / sqrt 2)^J = 1 - beta at 30 digits.
MPMATH_QUANTILES = {
    (1, 0.05): 1.95996398454005,
    (100, 0.05): 3.47397886915405,
    (10, 0.1): 2.55955119379137,
    (1000, 0.01): 4.41608870786915,
    (10000, 0.5): 3.97863409401247,
}


class TestQuantile:
    @pytest.mark.parametrize("key,expected", MPMATH_QUANTILES.items())
    def test_against_mpmath(self, key, expected):
        assert gaussian_max_quantile(QuantileSpec(*key)) == pytest.approx(expected, abs=1e-9)

    def test_one_sigma(self):
        # P(|Z| <= 1) = erf(1 / sqrt 2) = 0.6826895
        beta = 1.0 - special.erf(1.0 / math.sqrt(2.0))
        assert gaussian_max_quantile(QuantileSpec(1, beta)) == pytest.approx(1.0, abs=1e-9)
        assert round(gaussian_max_quantile(QuantileSpec(1, 0.3173105)), 6) == 1.0

    def test_brute_force_monte_carlo_j100(self):
        rng = np.random.default_rng(99)
        draws = np.concatenate([np.abs(rng.standard_normal((100_000, 100))).max(axis=1) for _ in range(10)])
        assert np.quantile(draws, 0.95) == pytest.approx(gaussian_max_quantile(QuantileSpec(100, 0.05)), abs=0.01)

    @pytest.mark.parametrize("cells,beta", [(0, 0.1), (3, 0.0), (3, 1.0), (2, -0.1)])
    def test_invalid_spec(self, cells, beta):
        with pytest.raises(ValueError):
            QuantileSpec(cells, beta)

    @settings(max_examples=300, deadline=None)
    @given(cells=st.integers(1, 10**6), beta=st.floats(1e-6, 1 - 1e-6))
    def test_defining_equation_and_growth(self, cells, beta):
        c = gaussian_max_quantile(QuantileSpec(cells, beta))
        assert abs(gaussian_max_cdf(np.array([c]), cells)[0] - (1 - beta)) <= 1e-8
        assert c <= math.sqrt(2 * math.log(2 * cells / beta))

    @settings(max_examples=200, deadline=None)
    @given(cells=st.integers(1, 10**5), beta=st.floats(1e-4, 0.99))
    def test_monotone(self, cells, beta):
        c = gaussian_max_quantile(QuantileSpec(cells, beta))
        assert gaussian_max_quantile(QuantileSpec(cells + 1, beta)) > c
        assert gaussian_max_quantile(QuantileSpec(cells, beta * 0.9)) > c


def _uniform_fit(n=100, inv_mesh=2, seed=0):
    rng = np.random.default_rng(seed)
    return fit(Grid(1, inv_mesh), Dataset(rng.random(n), rng.normal(size=n)))


class TestBuildBand:
    def test_homoscedastic_uniform_radius(self):
        f = _uniform_fit()
        tau = TauModel(f.grid, np.full(2, 0.5), np.ones(2, dtype=bool))
        band = build_band(f, tau, 0.05, quantile=2.0)
        # c * sigma / sqrt(n delta^p) = 2 / sqrt(50)
        np.testing.assert_allclose(band.radius, 2 / math.sqrt(50), rtol=1e-15)
        np.testing.assert_allclose(band.center, f.mean_y)

    def test_default_quantile(self):
        f = _uniform_fit(inv_mesh=10, n=500)
        tau = tau_oracle(f.grid, lambda x: np.ones(len(x)), lambda x: np.ones(len(x)))
        band = build_band(f, tau, 0.1)
        assert band.quantile == pytest.approx(MPMATH_QUANTILES[(10, 0.1)], abs=1e-9)

    def test_undefined_tau_is_degenerate(self):
        f = _uniform_fit()
        tau = TauModel(f.grid, np.array([0.5, 0.0]), np.array([True, False]))
        band = build_band(f, tau, 0.05)
        assert band.degenerate.tolist() == [False, True]
        assert math.isinf(band.radius[1]) and math.isfinite(band.radius[0])

    def test_empty_cell_is_degenerate(self):
        f = fit(Grid(1, 2), Dataset([0.1, 0.2], [1.0, 2.0]))
        tau = TauModel(f.grid, np.full(2, 0.5), np.ones(2, dtype=bool))
        band = build_band(f, tau, 0.05)
        assert band.degenerate.tolist() == [False, True]

    def test_radius_scales_with_n(self):
        f = _uniform_fit()
        tau = TauModel(f.grid, np.full(2, 0.5), np.ones(2, dtype=bool))
        b1 = build_band(f, tau, 0.05)
        f2 = type(f)(f.grid, f.count, f.mean_y, f.mean_y2, f.empty, 2 * f.n)
        b2 = build_band(f2, tau, 0.05)
        np.testing.assert_allclose(b2.radius / b1.radius, 1 / math.sqrt(2), rtol=1e-14)

    def test_grid_mismatch(self):
        f = _uniform_fit()
        tau = TauModel(Grid(1, 3), np.ones(3), np.ones(3, dtype=bool))
        with pytest.raises(GridError):
            build_band(f, tau, 0.05)

    def test_width_within_density_bounds(self):
        # f_X in [0.5, 1.25], sigma^2 in [1, 2] for the beta mixture with w = 0.5 and 1 + x
        w = 0.5
        dens = lambda x: w + (1 - w) * 6 * x[:, 0] * (1 - x[:, 0])  # noqa: E731
        grid = Grid(1, 8)
        tau = tau_oracle(grid, dens, lambda x: 1.0 + x[:, 0])
        n = 1000
        f = fit(grid, Dataset(np.linspace(0.001, 0.999, n), np.zeros(n)))
        band = build_band(f, tau, 0.05)
        vol = grid.cell_volume
        lo = band.quantile / math.sqrt(1.25 * n * vol / 1.0)
        hi = band.quantile / math.sqrt(0.5 * n * vol / 2.0)
        assert np.all(band.radius >= lo - 1e-12) and np.all(band.radius <= hi + 1e-12)


class TestCovers:
    def _band(self, center, radius):
        grid = Grid(1, len(center))
        from histoband.bands import ConfidenceBand

        return ConfidenceBand(grid, np.asarray(center, float), np.asarray(radius, float),
                              ~np.isfinite(radius), 0.1, 1.0, 10)

    def test_m_equal_center(self):
        band = self._band([1.0, -2.0, 0.5], [0.1, 0.1, 0.1])
        m = lambda x: np.array([1.0, -2.0, 0.5])[Grid(1, 3).locate(x)]  # noqa: E731
        assert covers(band, m, 1)
        assert covers(band, m, 16)

    def test_exceeding_at_one_probe(self):
        band = self._band([0.0, 0.0], [0.1, 0.1])
        m = lambda x: np.where(np.abs(x[:, 0] - 0.8) < 0.02, 0.2, 0.0)  # noqa: E731
        assert not covers(band, m, 20)

    def test_degenerate_cell(self):
        band = self._band([0.0, 0.0], [0.1, np.inf])
        m = lambda x: np.where(x[:, 0] > 0.5, 100.0, 0.0)  # noqa: E731
        assert covers(band, m, 4)
        assert not covers(band, m, 4, degenerate_fails=True)

    def test_piecewise_constant_probe_exactness(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            inv_mesh = int(rng.integers(1, 8))
            grid = Grid(1, inv_mesh)
            levels = rng.normal(size=inv_mesh)
            m = lambda x, lv=levels, g=grid: lv[g.locate(x)]  # noqa: E731
            band = self._band(levels + rng.normal(scale=0.1, size=inv_mesh), np.full(inv_mesh, 0.12))
            assert covers(band, m, 1) == covers(band, m, 16)

    def test_probe_extremes(self):
        grid = Grid(1, 2)
        lo, hi = probe_extremes(grid, lambda x: x[:, 0], 4)
        np.testing.assert_allclose(lo, [0.0625, 0.5625])
        np.testing.assert_allclose(hi, [0.4375, 0.9375])
