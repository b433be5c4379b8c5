"""Acceptance gate: one printed PASS/FAIL line per criterion.

The Monte-Carlo criteria use pre-committed seeds (package defaults or 0);
they were not tuned to make the checks pass.
"""
import json
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from wqes import _kernels
from wqes.backtest import LossMatrix, mcs
from wqes.caviar import CaviarParams, CaviarSpec, fit_caviar, fit_grid, filter
from wqes.cli import parse_config, read_forecast, run, write_returns, ReturnSeries, forecast_path
from wqes.core import standardized_t_var_es
from wqes.optimize import MultiStartConfig
from wqes.simulate import DgpForm, DgpSpec, run_bias_study, simulate, true_means
from wqes.wq import EsTag, EsWeightFit, _weights, build_grid, es_estimate

ALPHA = 0.025
CAVIAR_CFG = MultiStartConfig(n_candidates=1000)
TRUE_VAR_1, TRUE_ES_1 = -1.3775, -1.7428


@pytest.fixture(scope="module")
def model1():
    t0 = time.time()
    rep = run_bias_study(DgpSpec(form=DgpForm.AV_GARCH_T, n_reps=200), alpha1_set=(0.015,),
                         caviar_cfg=CAVIAR_CFG)
    rep.seconds = time.time() - t0
    return rep


@pytest.fixture(scope="module")
def model2():
    return run_bias_study(DgpSpec(form=DgpForm.GARCH_T, n_reps=200), alpha1_set=(0.01,),
                          caviar_cfg=CAVIAR_CFG)


@pytest.mark.slow
def test_criterion_1_model1_bias(model1, record):
    beta = model1.cell(EsTag.WQ_BETA, 3, 0.015)["es_delta"]
    nobc = model1.cell(EsTag.SA_NO_BC, 3, 0.015)["es_delta"]
    # deltas are against the simulated truths; the published truth is shown for reference
    vs_ref = abs(model1.cell(EsTag.WQ_BETA, 3, 0.015)["es_mean"] - TRUE_ES_1)
    ok = beta <= 0.02 and 0.15 <= nobc <= 0.40 and model1.n_failed == 0
    record("1", ok, f"WQ-Beta ES_delta={beta:.4f} (<=0.02; vs -1.7428: {vs_ref:.4f}), "
                    f"SA-No-BC ES_delta={nobc:.4f} (in [0.15,0.40]), 200 reps, "
                    f"failed={model1.n_failed}, {model1.seconds:.0f}s on 1 core")
    assert ok


@pytest.mark.slow
def test_criterion_2_model2_ordering(model2, record):
    d = {t: model2.cell(t, 3, 0.01)["es_delta"] for t in (EsTag.WQ_BETA, EsTag.SA_BC, EsTag.SA_NO_BC)}
    ok = d[EsTag.WQ_BETA] < d[EsTag.SA_BC] < d[EsTag.SA_NO_BC]
    record("2", ok, "WQ-Beta {:.4f} < SA-BC {:.4f} < SA-No-BC {:.4f}".format(*d.values()))
    assert ok


@pytest.mark.slow
def test_criterion_3_var_first_stage(model1, model2, record):
    ok = model1.var_delta <= 0.02 and model2.var_delta > model1.var_delta
    record("3", ok, f"Model 1 VaR_delta={model1.var_delta:.4f} (<=0.02), "
                    f"Model 2 VaR_delta={model2.var_delta:.4f} (> Model 1)")
    assert ok


def test_criterion_4_consistency_scan(record):
    nu = 10.0
    q_star, es_star = standardized_t_var_es(ALPHA, nu)
    s = math.sqrt((nu - 2) / nu)
    t_a = stats.t.ppf(ALPHA, nu)
    tail, _ = integrate.quad(lambda x: x * stats.t.pdf(x, nu), -np.inf, t_a)
    quad_ok = abs(s * t_a - q_star) < 1e-4 and abs(s * tail / ALPHA - es_star) < 1e-4

    x = np.random.default_rng(0).standard_t(nu, 50_000) * s
    step = 0.02
    q_grid = q_star + step * np.arange(-30, 31)
    e_grid = es_star + step * np.arange(-40, 41)
    best = (math.inf, None, None)
    for q in q_grid:
        qa = np.full(x.size, q)
        for e in e_grid:
            if e >= 0:
                continue
            v = _kernels.al_score_sum(x, qa, np.full(x.size, e), ALPHA)
            if v < best[0]:
                best = (v, q, e)
    _, q_hat, e_hat = best
    ok = quad_ok and abs(q_hat - q_star) <= step + 1e-12 and abs(e_hat - es_star) <= step + 1e-12
    record("4", ok, f"grid argmin ({q_hat:.4f}, {e_hat:.4f}) vs analytic ({q_star:.4f}, {es_star:.4f}), "
                    f"step {step}; quadrature check {'ok' if quad_ok else 'FAILED'}")
    assert ok


def test_criterion_5_true_values(record):
    var, es = true_means(DgpSpec(), n_reps=1000)
    ok = abs(var - TRUE_VAR_1) <= 0.01 and abs(es - TRUE_ES_1) <= 0.01
    record("5", ok, f"mean true VaR={var:.4f} (-1.3775+-0.01), mean true ES={es:.4f} (-1.7428+-0.01)")
    assert ok


def test_criterion_6_nesting_identities(av_series, record):
    r = av_series.returns
    cfg = MultiStartConfig(n_candidates=500)
    M = 3
    qm = fit_grid(r, build_grid(ALPHA, 0.015, M), CaviarSpec.SAV, cfg)
    Q = qm.values
    checks = {}

    # WQ-EW with w1 = 1/M is SA-BC; with w0 = 0 as well it is SA-No-BC
    w0 = -0.137
    ew = _weights(EsTag.WQ_EW, np.array([w0, 1.0 / M]), M, M)
    bc = _weights(EsTag.SA_BC, np.array([w0]), M, M)
    nobc = _weights(EsTag.SA_NO_BC, np.zeros(0), M, M)
    ew0 = _weights(EsTag.WQ_EW, np.array([0.0, 1.0 / M]), M, M)
    es_ew = ew[0] + Q @ ew[1]
    checks["EW==SA-BC"] = np.array_equal(es_ew, bc[0] + Q @ bc[1])
    checks["EW(w0=0)==SA-No-BC"] = np.array_equal(ew0[0] + Q @ ew0[1], nobc[0] + Q @ nobc[1])

    # reparameterisation w = theta * w_tilde
    w = np.array([0.61, 0.27, 0.44])
    theta = w.sum()
    a = es_estimate(EsWeightFit(EsTag.WQ_UNC, qm.grid, w, w0=w0), Q)
    b = es_estimate(EsWeightFit(EsTag.WQ_UNC, qm.grid, theta * (w / theta), w0=w0), Q)
    checks["reparam"] = np.max(np.abs(a - b)) <= 1e-14

    # common-beta2 recursions compose into an ES recursion of the same form
    b2 = 0.87
    params = [(-0.09, -0.21), (-0.07, -0.17), (-0.05, -0.13)]
    q_init = [-2.4, -2.0, -1.7]
    paths = np.column_stack([filter(CaviarParams(CaviarSpec.SAV, (p0, p1, b2)), r, qi)
                             for (p0, p1), qi in zip(params, q_init)])
    es_path = w0 + paths @ w
    b0_star = w0 * (1 - b2) + sum(wi * p[0] for wi, p in zip(w, params))
    b1_bar = sum(wi * p[1] for wi, p in zip(w, params))
    implied = b0_star + b1_bar * np.abs(r[:-1]) + b2 * es_path[:-1]
    gap = float(np.max(np.abs(es_path[1:] - implied)))
    checks["common-beta2"] = gap <= 1e-12

    checks["rows monotone"] = bool(np.all(np.diff(Q, axis=1) >= 0) and np.all(np.diff(qm.forecasts) >= 0))

    worst = -math.inf
    for k in range(5):
        rk = simulate(DgpSpec(), 300 + k).returns
        sav = fit_caviar(rk, ALPHA, CaviarSpec.SAV, cfg.replace(rng_seed=k))
        as_ = fit_caviar(rk, ALPHA, CaviarSpec.AS, cfg.replace(rng_seed=k))
        worst = max(worst, as_.loss - sav.loss)
    checks["AS<=SAV"] = worst <= 1e-6

    ok = all(checks.values())
    record("6", ok, ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items())
           + f" (recursion gap {gap:.1e}, max AS-SAV {worst:.1e})")
    assert ok


def test_criterion_7_mcs(record):
    rng = np.random.default_rng(0)
    a = rng.normal(size=1000)
    dom = LossMatrix(np.column_stack([a, a + 1.0]), ["A", "B"])
    dominance = all(mcs(dom, 0.75, m).included == ["A"] for m in ("R", "SQ"))

    hits = {"R": 0, "SQ": 0}
    runs = 100
    for k in range(runs):
        g = np.random.default_rng(1000 + k)
        L = g.normal(0.5, 1.0, size=(2000, 12))
        L[:, 0] = g.normal(0.0, 1.0, size=2000)
        lm = LossMatrix(L, [f"m{j}" for j in range(12)])
        for meth in hits:
            hits[meth] += "m0" in mcs(lm, 0.75, meth, seed=k).included
    ok = dominance and min(hits.values()) >= 95
    record("7", ok, f"dominance eliminated (R and SQ): {dominance}; coverage R={hits['R']}/100, "
                    f"SQ={hits['SQ']}/100 (>=95)")
    assert ok


@pytest.mark.slow
def test_criterion_8_end_to_end_backtest(tmp_path, record):
    n, m = 1500, 400
    sim = simulate(DgpSpec(n=n + m), 0)
    dates = [f"d{t:05d}" for t in range(n + m)]
    write_returns(tmp_path / "sim.csv", ReturnSeries("sim", dates, sim.returns))
    models = ["WQ-Beta-3-SAV", "WQ-EW-3-SAV", "WQ-UNC-3-SAV", "SA-BC-3-SAV", "SA-No-BC-3-SAV",
              "GARCH-t", "CARE-SAV", "ES-CAViaR-Add-SAV", "ES-CAViaR-Mult-SAV", "WQ-Beta-3-AS"]
    raw = {
        "command": "backtest", "output_dir": "out", "data": ["sim.csv"], "models": models,
        "alpha1": 0.005, "seed": 0,
        "rolling": {"in_sample_n": n, "out_sample_m": m, "refit_interval": 20},
        "multistart": {"n_candidates": 1000},
    }
    cfg = parse_config(raw, tmp_path)
    t0 = time.time()
    run(cfg)
    secs = time.time() - t0
    lo = stats.binom.ppf(0.005, m, ALPHA) / m
    hi = stats.binom.ppf(0.995, m, ALPHA) / m
    r_out = sim.returns[n:]
    problems, rates = [], {}
    for name in models:
        fdates, var, es = read_forecast(forecast_path(cfg.output_dir / "forecasts", "sim", name))
        if fdates != dates[n:] or not (np.all(np.isfinite(var)) and np.all(np.isfinite(es))):
            problems.append(f"{name}: incomplete")
            continue
        rates[name] = float(np.mean(r_out < var))
        if not lo <= rates[name] <= hi:
            problems.append(f"{name}: violation rate {rates[name]:.4f}")
        if np.any(es > var):
            problems.append(f"{name}: ES above VaR")
    summary = (cfg.output_dir / "loss_summary_joint.csv").read_text().splitlines()
    if len(summary) != len(models) + 1:
        problems.append("loss summary incomplete")
    ok = not problems
    span = ", ".join(f"{k}={v:.3f}" for k, v in rates.items())
    record("8", ok, f"10 models, band [{lo:.4f}, {hi:.4f}], {secs:.0f}s; rates: {span}"
           + (f"; problems: {problems}" if problems else ""))
    assert ok
