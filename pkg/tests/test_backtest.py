import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wqes.backtest import (
    LossMatrix,
    RollingConfig,
    aggregate_joint_loss,
    aggregate_quantile_loss,
    fit_model,
    joint_loss_series,
    mcs,
    parse_model,
    rolling_forecast,
)
from wqes.baselines import EsCaviarForm
from wqes.caviar import CaviarSpec
from wqes.core import DomainError
from wqes.optimize import MultiStartConfig
from wqes.wq import EsTag, al_joint_loss

CFG = MultiStartConfig(n_candidates=200, rng_seed=2)


class TestParse:
    def test_wq_names(self):
        m = parse_model("WQ-Beta-3-SAV", 0.01)
        assert (m.kind, m.tag, m.M, m.alpha1, m.spec) == ("wq", EsTag.WQ_BETA, 3, 0.01, CaviarSpec.SAV)
        m = parse_model("SA-No-BC-10-AS")
        assert (m.tag, m.M, m.spec) == (EsTag.SA_NO_BC, 10, CaviarSpec.AS)

    def test_baselines(self):
        m = parse_model("ES-CAViaR-Mult-AS")
        assert (m.kind, m.form, m.spec) == ("es_caviar", EsCaviarForm.MULT, CaviarSpec.AS)
        assert parse_model("CARE-SAV").kind == "care"
        assert parse_model("GARCH-t").kind == "garch_t"

    def test_unknown(self):
        with pytest.raises(ValueError):
            parse_model("EGARCH-t")


class TestRolling:
    def test_single_step_is_one_fit(self, av_series):
        r = av_series.returns[:700]
        model = parse_model("SA-BC-3-SAV", 0.015)
        out = rolling_forecast(r, model, RollingConfig(600, 1), caviar_cfg=CFG)
        direct = fit_model(model, r[:600], caviar_cfg=CFG).forecast_from(r[:600])
        assert (out.var[0], out.es[0]) == direct
        assert out.refit_steps == [0]

    def test_single_fit_with_state_updates(self, av_series):
        r = av_series.returns
        model = parse_model("GARCH-t")
        out = rolling_forecast(r, model, RollingConfig(600, 30, refit_interval=30), caviar_cfg=CFG)
        assert out.refit_steps == [0]
        assert np.unique(out.var).size == 30
        fitted = fit_model(model, r[:600], caviar_cfg=CFG)
        assert (out.var[-1], out.es[-1]) == pytest.approx(fitted.forecast_from(r[:629]), rel=1e-14)

    def test_violation_rate_band(self, av_series):
        r = av_series.returns
        out = rolling_forecast(r, parse_model("WQ-Beta-3-SAV", 0.015), RollingConfig(1000, 100, 50),
                               caviar_cfg=CFG)
        rate = np.mean(r[1000:1100] < out.var)
        assert 0.0 <= rate <= 0.06
        assert np.all(out.es <= out.var)
        assert out.refit_steps == [0, 50]

    def test_insufficient_data(self):
        with pytest.raises(DomainError):
            rolling_forecast(np.zeros(100), parse_model("GARCH-t"), RollingConfig(90, 20))

    def test_config_checks(self):
        with pytest.raises(DomainError):
            RollingConfig(100, 10, refit_interval=0)


class TestLosses:
    def test_quantile_hand_value(self):
        assert aggregate_quantile_loss([-3.0], [-2.0], 0.025) == pytest.approx(0.975)

    def test_quantile_zero_at_returns(self, rng):
        r = rng.normal(size=20)
        assert aggregate_quantile_loss(r, r, 0.025) == 0.0

    def test_quantile_is_sum(self, rng):
        r, q = rng.normal(size=40), np.full(40, -1.5)
        u = r - q
        assert aggregate_quantile_loss(r, q, 0.05) == pytest.approx(np.sum((0.05 - (u < 0)) * u))

    def test_joint_single_step(self):
        assert aggregate_joint_loss([-3.0], [-2.0], [-2.5], 0.025) == pytest.approx(
            al_joint_loss(-3.0, -2.0, -2.5, 0.025))

    def test_joint_names_bad_step(self):
        with pytest.raises(DomainError, match="step 2"):
            joint_loss_series([0, 0, 0], [-1, -1, -1], [-2, -2, 0.1], 0.025)

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            aggregate_quantile_loss([1.0, 2.0], [1.0], 0.025)

    def test_loss_matrix_rejects_nonfinite(self):
        with pytest.raises(DomainError):
            LossMatrix(np.array([[1.0, np.nan]]), ["a", "b"])


def panel(rng, m, K, best=0, gap=0.5):
    L = rng.normal(gap, 1.0, size=(m, K))
    L[:, best] = rng.normal(0.0, 1.0, size=m)
    return LossMatrix(L, [f"m{k}" for k in range(K)])


class TestMcs:
    def test_single_model(self):
        res = mcs(LossMatrix(np.zeros((10, 1)), ["only"]))
        assert res.included == ["only"]

    @pytest.mark.parametrize("method", ["R", "SQ"])
    def test_dominance(self, rng, method):
        a = rng.normal(size=500)
        res = mcs(LossMatrix(np.column_stack([a, a + 1.0]), ["A", "B"]), 0.75, method)
        assert res.included == ["A"] and res.eliminated == ["B"]
        assert res.pvalues["B"] < 0.25

    def test_identical_columns_retained(self, rng):
        a = rng.normal(size=300)
        res = mcs(LossMatrix(np.column_stack([a, a]), ["A", "B"]))
        assert set(res.included) == {"A", "B"}

    def test_too_few_observations(self):
        with pytest.raises(DomainError):
            mcs(LossMatrix(np.zeros((20, 2)), ["a", "b"]))

    def test_bad_method(self, rng):
        with pytest.raises(ValueError):
            mcs(panel(rng, 100, 3), method="T")

    @settings(max_examples=15)
    @given(st.integers(0, 10_000), st.sampled_from(["R", "SQ"]))
    def test_lower_level_never_enlarges(self, seed, method):
        lm = panel(np.random.default_rng(seed), 200, 5, gap=0.15)
        sizes = [len(mcs(lm, lv, method, n_boot=200, seed=seed).included) for lv in (0.5, 0.75, 0.9, 0.99)]
        assert sizes == sorted(sizes)

    @settings(max_examples=15)
    @given(st.integers(0, 10_000))
    def test_duplicate_keeps_original(self, seed):
        lm = panel(np.random.default_rng(seed), 200, 4, gap=0.2)
        base = mcs(lm, n_boot=200, seed=seed)
        for name in base.included:
            k = lm.labels.index(name)
            dup = LossMatrix(np.column_stack([lm.losses, lm.losses[:, k]]), lm.labels + ["dup"])
            assert name in mcs(dup, n_boot=200, seed=seed).included

    def test_column_order_irrelevant(self, rng):
        lm = panel(rng, 400, 6, best=2, gap=0.1)
        perm = [5, 3, 1, 0, 2, 4]
        swapped = LossMatrix(lm.losses[:, perm], [lm.labels[k] for k in perm])
        assert set(mcs(lm).included) == set(mcs(swapped).included)

    def test_coverage_small(self):
        hits = sum(
            "m0" in mcs(panel(np.random.default_rng(s), 2000, 12), n_boot=300, seed=s).included
            for s in range(20)
        )
        assert hits >= 18
