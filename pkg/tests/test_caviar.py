import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wqes.caviar import (
    CaviarParams,
    CaviarSpec,
    QuantileGrid,
    fit_caviar,
    fit_grid,
    filter,
    initial_quantile,
    quantile_loss,
    rearrange,
    violation_rate,
)
from wqes.core import DomainError, StudentTParams, student_t_inv_cdf
from wqes.optimize import MultiStartConfig
from wqes.simulate import DgpSpec, simulate
from wqes.wq import EsTag, build_grid

SAV = CaviarSpec.SAV
AS = CaviarSpec.AS


class TestQuantileLoss:
    @pytest.mark.parametrize("r,q,expected", [(-1, -2, 0.025), (-2, -2, 0.0), (-3, -2, 0.975)])
    def test_hand_values(self, r, q, expected):
        assert quantile_loss([r], [q], 0.025) == pytest.approx(expected, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            quantile_loss([1.0, 2.0], [1.0], 0.025)

    def test_constant_scan_minimised_at_true_quantile(self, rng):
        x = rng.standard_t(10, 200_000)
        grid = np.arange(-3.0, -1.5, 0.01)
        losses = [quantile_loss(x, np.full(x.size, g), 0.025) for g in grid]
        best = grid[int(np.argmin(losses))]
        assert abs(best - student_t_inv_cdf(0.025, StudentTParams(10))) <= 0.03


class TestFilter:
    def test_geometric_decay(self, rng):
        r = rng.normal(size=30)
        q = filter(CaviarParams(SAV, (0, 0, 0.9)), r, -1.0)
        np.testing.assert_allclose(q, -(0.9 ** np.arange(30)), rtol=1e-14)

    def test_hand_step(self):
        q = filter(CaviarParams(SAV, (-0.05, -0.1, 0.9)), np.array([2.0, 0.0]), -1.0)
        assert q[1] == pytest.approx(-1.15, abs=1e-14)

    def test_as_filter_uses_signed_slopes(self):
        r = np.array([2.0, -3.0, 0.0])
        q = filter(CaviarParams(AS, (0.1, -0.2, -0.5, 0.5)), r, -1.0)
        assert q[1] == pytest.approx(0.1 - 0.4 - 0.5)
        assert q[2] == pytest.approx(0.1 - 1.5 + 0.5 * q[1])

    @given(arrays(np.float64, 40, elements=st.floats(-10, 10)),
           st.floats(-1, 0), st.floats(-1, 0), st.floats(-0.99, 0.99), st.floats(-3, 0))
    def test_as_nests_sav_path(self, r, b0, b1, b2, q0):
        sav = filter(CaviarParams(SAV, (b0, b1, b2)), r, q0)
        as_ = filter(CaviarParams(AS, (b0, b1, b1, b2)), r, q0)
        assert np.array_equal(sav, as_)

    def test_param_count_checked(self):
        with pytest.raises(DomainError):
            CaviarParams(SAV, (1.0, 2.0))


class TestRearrange:
    def test_sort(self):
        np.testing.assert_array_equal(rearrange([-2.1, -2.3, -1.9]), [-2.3, -2.1, -1.9])

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)))
    def test_idempotent_and_sum_preserving(self, row):
        out = rearrange(row)
        assert np.all(np.diff(out) >= 0)
        np.testing.assert_array_equal(rearrange(out), out)
        assert sorted(out.tolist()) == sorted(row.tolist())


class TestGrid:
    def test_rejects_uneven_spacing(self):
        with pytest.raises(DomainError):
            QuantileGrid(np.array([0.01, 0.02, 0.04]), 2)

    def test_reference_grid_levels(self):
        g = build_grid(0.025, 0.005, 10, EsTag.SA_BC)
        listed = [0.005, 0.0072, 0.0094, 0.0117, 0.0139, 0.0161, 0.0183, 0.0206, 0.0228, 0.025]
        np.testing.assert_allclose(g.levels, listed, atol=1e-4)
        assert g.alpha == 0.025


class TestFit:
    def test_short_series_rejected(self):
        with pytest.raises(DomainError):
            fit_caviar(np.zeros(100), 0.025)

    def test_constant_series(self):
        r = np.full(400, -0.7)
        fit = fit_caviar(r, 0.025, SAV, MultiStartConfig(n_candidates=200))
        assert fit.loss <= quantile_loss(r, r, 0.025) + 1e-8

    def test_forecast_is_one_more_step(self, av_series, fast_cfg):
        r = av_series.returns
        fit = fit_caviar(r, 0.025, SAV, fast_cfg)
        b0, b1, b2 = fit.params.values
        assert fit.forecast == pytest.approx(b0 + b1 * abs(r[-1]) + b2 * fit.path[-1], rel=1e-14)
        assert fit.forecast_from(r) == fit.forecast
        assert fit.q_init == initial_quantile(r, 0.025)

    def test_single_level_grid_equals_direct_fit(self, av_series, fast_cfg):
        from wqes.caviar import level_seed

        r = av_series.returns
        qm = fit_grid(r, QuantileGrid(np.array([0.025]), 0), SAV, fast_cfg)
        direct = fit_caviar(r, 0.025, SAV, fast_cfg.replace(rng_seed=level_seed(fast_cfg.rng_seed, 0.025)))
        np.testing.assert_array_equal(qm.values[:, 0], direct.path)
        assert qm.forecasts[0] == direct.forecast

    def test_grid_rows_monotone(self, av_series, fast_cfg):
        qm = fit_grid(av_series.returns, build_grid(0.025, 0.005, 4), SAV, fast_cfg)
        assert np.all(np.diff(qm.values, axis=1) >= 0)
        assert np.all(np.diff(qm.forecasts) >= 0)

    def test_as_fit_not_worse_than_sav(self, av_series, fast_cfg):
        r = av_series.returns
        sav = fit_caviar(r, 0.025, SAV, fast_cfg)
        as_ = fit_caviar(r, 0.025, AS, fast_cfg)
        assert as_.loss <= sav.loss + 1e-6
        b0, b1, b2 = sav.params.values
        nested = fit_caviar(r, 0.025, AS, fast_cfg, starts=[[b0, b1, b1, b2]])
        assert nested.loss <= sav.loss

    def test_in_sample_violation_rate(self):
        cfg = MultiStartConfig(n_candidates=500)
        hits = 0
        for k in range(20):
            r = simulate(DgpSpec(), 100 + k).returns
            fit = fit_caviar(r, 0.025, SAV, cfg.replace(rng_seed=k))
            hits += abs(violation_rate(r, fit.path) - 0.025) <= 0.015
        assert hits >= 18


@pytest.mark.xfail(
    reason="fitted beta2 lands in [0.75, 0.95] in roughly 80% of replications; "
    "the sampling spread at n=1900 is about 0.07 and the fits beat the true parameters",
    strict=False,
)
def test_persistence_recovered_in_90_percent_of_replications():
    cfg = MultiStartConfig(n_candidates=1000)
    b2 = np.array([
        fit_caviar(simulate(DgpSpec(), k).returns, 0.025, SAV, cfg.replace(rng_seed=k)).params.persistence
        for k in range(100)
    ])
    rate = np.mean((b2 >= 0.75) & (b2 <= 0.95))
    print(f"share of beta2 in [0.75, 0.95]: {rate:.2f}")
    assert rate >= 0.9
