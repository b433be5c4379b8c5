"""Competing VaR/ES forecasters: ES-CAViaR (additive and multiplicative),
CARE-SAV and GARCH with standardized Student-t errors."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .caviar import (
    BETA2_BOUND, INIT_WINDOW, MIN_OBS, CaviarParams, CaviarSpec, fit_caviar, initial_quantile,
)
from .core import DomainError, log_gamma, standardized_t_var_es
from .optimize import BoxConstraints, MultiStartConfig, OptimizationError, minimize_multistart

ADD_CANDIDATES = 10_000
MULT_CANDIDATES = 1_000


def _check_returns(returns) -> np.ndarray:
    r = np.ascontiguousarray(returns, dtype=float)
    if r.ndim != 1 or r.size < MIN_OBS:
        raise DomainError(f"need at least {MIN_OBS} returns, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise DomainError("returns contain non-finite values")
    return r


# --------------------------------------------------------------------------
# ES-CAViaR


class EsCaviarForm(str, enum.Enum):
    ADD = "ADD"
    MULT = "MULT"


@dataclass
class EsCaviarFit:
    form: EsCaviarForm
    quantile: CaviarParams
    gammas: tuple
    q_init: float
    x_init: float
    alpha: float
    var_path: np.ndarray
    es_path: np.ndarray
    var_forecast: float
    es_forecast: float
    loss: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def multiplier(self) -> float:
        """ES/VaR ratio of the multiplicative form."""
        return 1.0 + math.exp(self.gammas[0])

    def _paths(self, r):
        g = self.gammas + (0.0,) * (3 - len(self.gammas))
        return _kernels.es_caviar_paths(
            *self.quantile.kernel_args(), g[0], g[1], g[2],
            self.form == EsCaviarForm.MULT, r, self.q_init, self.x_init,
        )

    def forecast_from(self, returns) -> tuple[float, float]:
        """One-step (VaR, ES) after filtering ``returns`` with the fitted parameters."""
        r = np.ascontiguousarray(returns, dtype=float)
        q, es = self._paths(r)
        return _next_es_caviar(self, r[-1], q[-1], es[-1])


def _next_es_caviar(fit: EsCaviarFit, r_last, q_last, es_last):
    q_next = _kernels.caviar_next(*fit.quantile.kernel_args(), r_last, q_last)
    if fit.form == EsCaviarForm.MULT:
        return float(q_next), float(fit.multiplier * q_next)
    x = q_last - es_last
    if r_last <= q_last:
        g0, g1, g2 = fit.gammas
        x = g0 + g1 * (q_last - r_last) + g2 * x
    return float(q_next), float(q_next - x)


def initial_gap(returns, alpha: float) -> float:
    """Non-negative VaR-to-ES gap of the first observations: quantile minus tail mean."""
    head = np.asarray(returns, dtype=float)[:INIT_WINDOW]
    q = float(np.quantile(head, alpha))
    tail = head[head <= q]
    return max(0.0, q - float(tail.mean())) if tail.size else 0.0


def fit_es_caviar(
    returns,
    alpha: float,
    form: EsCaviarForm = EsCaviarForm.MULT,
    spec: CaviarSpec = CaviarSpec.SAV,
    cfg: MultiStartConfig = MultiStartConfig(n_candidates=1000),
    n_candidates: Optional[int] = None,
) -> EsCaviarFit:
    """Joint fit of the quantile and ES components by minimising the AL score.

    The quantile coefficients of every candidate are the CAViaR estimates at
    ``alpha`` (fitted with ``cfg``); only the ES component is drawn at random.
    All coefficients are then refined jointly.
    """
    r = _check_returns(returns)
    form, spec = EsCaviarForm(form), CaviarSpec(spec)
    q0 = initial_quantile(r, alpha)
    x0 = initial_gap(r, alpha)
    base = fit_caviar(r, alpha, spec, cfg, q_init=q0)
    beta = np.array(base.params.values)
    nb = beta.size
    mult = form == EsCaviarForm.MULT

    def split(th):
        if nb == 3:
            return th[0], th[1], th[1], th[2]
        return th[0], th[1], th[2], th[3]

    if mult:
        n_es, g_lo, g_hi = 1, [-3.0], [1.0]
        box_lo = np.r_[np.full(nb, -np.inf), -np.inf]
        box_hi = np.r_[np.full(nb, np.inf), np.inf]

        def objective(th):
            return _kernels.es_caviar_loss(*split(th), th[nb], 0.0, 0.0, True, r, q0, x0, alpha)
    else:
        n_es, g_lo, g_hi = 3, [0.0] * 3, [1.0] * 3
        box_lo = np.r_[np.full(nb, -np.inf), np.zeros(3)]
        box_hi = np.r_[np.full(nb, np.inf), np.full(3, np.inf)]

        def objective(th):
            return _kernels.es_caviar_loss(*split(th), th[nb], th[nb + 1], th[nb + 2],
                                           False, r, q0, x0, alpha)

    box_lo[nb - 1], box_hi[nb - 1] = -BETA2_BOUND, BETA2_BOUND
    n_cand = n_candidates or (MULT_CANDIDATES if mult else ADD_CANDIDATES)
    es_cfg = cfg.replace(n_candidates=n_cand, n_refine=min(cfg.n_refine, n_cand))
    res = minimize_multistart(
        objective, nb + n_es, es_cfg, BoxConstraints(box_lo, box_hi),
        sampling_bounds=(np.r_[beta, g_lo], np.r_[beta, g_hi]),
    )
    th = res.x
    fit = EsCaviarFit(
        form, CaviarParams(spec, tuple(th[:nb])), tuple(float(v) for v in th[nb:]),
        q0, x0, alpha, np.empty(0), np.empty(0), math.nan, math.nan, float(res.fun),
        res.diagnostics,
    )
    fit.var_path, fit.es_path = fit._paths(r)
    fit.var_forecast, fit.es_forecast = _next_es_caviar(fit, r[-1], fit.var_path[-1], fit.es_path[-1])
    return fit


# --------------------------------------------------------------------------
# CARE


def care_scale(tau: float, alpha: float) -> float:
    """ES/expectile ratio ``1 + tau / ((1 - 2 tau) alpha)``."""
    if not 0 < tau < 0.5:
        raise DomainError(f"tau must lie in (0, 0.5), got {tau}")
    return 1.0 + tau / ((1.0 - 2.0 * tau) * alpha)


def sample_expectile(x, tau: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    x = np.asarray(x, dtype=float)
    mu = float(x.mean())
    for _ in range(max_iter):
        w = np.where(x < mu, 1.0 - tau, tau)
        new = float(np.sum(w * x) / np.sum(w))
        if abs(new - mu) < tol:
            return new
        mu = new
    return mu


def als_loss(returns, expectiles, tau: float) -> float:
    """Mean asymmetric least squares loss ``|tau - 1{r < mu}| (r - mu)^2``."""
    u = np.asarray(returns, dtype=float) - np.asarray(expectiles, dtype=float)
    return float(np.mean(np.abs(tau - (u < 0)) * u * u))


@dataclass
class CareFit:
    tau: float
    alpha: float
    params: tuple
    mu_init: float
    scale: float
    var_path: np.ndarray
    es_path: np.ndarray
    var_forecast: float
    es_forecast: float
    loss: float
    violation_rate: float
    tau_table: list = field(default_factory=list)

    def forecast_from(self, returns) -> tuple[float, float]:
        r = np.ascontiguousarray(returns, dtype=float)
        b0, b1, b2 = self.params
        mu = _kernels.caviar_path(b0, b1, b1, b2, r, self.mu_init)
        nxt = float(_kernels.caviar_next(b0, b1, b1, b2, r[-1], mu[-1]))
        return nxt, self.scale * nxt


def care_tau_grid(alpha: float, grid_size: int = 50) -> np.ndarray:
    if grid_size < 1:
        raise DomainError("expectile grid must have at least one point")
    return np.linspace(alpha / grid_size, alpha, grid_size)


def fit_care_sav(
    returns,
    alpha: float,
    grid_size: int = 50,
    cfg: MultiStartConfig = MultiStartConfig(n_candidates=1000),
) -> CareFit:
    """Fit SAV expectile recursions over a tau grid and keep the tau whose
    in-sample violation rate is closest to ``alpha`` (quantile loss breaks ties)."""
    r = _check_returns(returns)
    taus = care_tau_grid(alpha, grid_size)
    s = -1.0 if alpha < 0.5 else 1.0
    sampling = (np.array([min(0, s), min(0, s), 0.0]), np.array([max(0, s), max(0, s), 1.0]))
    # negative persistence lets the path oscillate around a constant and overfit
    box = BoxConstraints(np.array([-np.inf, -np.inf, 0.0]),
                         np.array([np.inf, np.inf, BETA2_BOUND]))
    best = None
    table = []
    warm = None
    for k, tau in enumerate(taus):
        mu0 = sample_expectile(r[:INIT_WINDOW], tau)

        def objective(th, tau=tau, mu0=mu0):
            return _kernels.care_loss(th[0], th[1], th[2], r, mu0, tau)

        res = minimize_multistart(
            objective, 3, cfg.replace(rng_seed=cfg.rng_seed + k), box,
            sampling_bounds=sampling, starts=None if warm is None else [warm],
        )
        warm = res.x
        b0, b1, b2 = (float(v) for v in res.x)
        mu = _kernels.caviar_path(b0, b1, b1, b2, r, mu0)
        vrate = float(np.mean(r < mu))
        u = r - mu
        qloss = float(np.mean((alpha - (u < 0)) * u))
        table.append({"tau": float(tau), "violation_rate": vrate, "quantile_loss": qloss,
                      "als_loss": float(res.fun)})
        key = (abs(vrate - alpha), qloss)
        if best is None or key < best[0]:
            best = (key, float(tau), (b0, b1, b2), mu0, mu, float(res.fun), vrate)
    if best is None:
        raise DomainError("empty expectile grid")
    _, tau, params, mu0, mu, loss, vrate = best
    scale = care_scale(tau, alpha)
    b0, b1, b2 = params
    nxt = float(_kernels.caviar_next(b0, b1, b1, b2, r[-1], mu[-1]))
    return CareFit(tau, alpha, params, mu0, scale, mu, scale * mu, nxt, scale * nxt,
                   loss, vrate, table)


# --------------------------------------------------------------------------
# GARCH-t


@dataclass
class GarchTFit:
    omega: float
    gamma: float
    delta: float
    nu: float
    alpha: float
    s2_init: float
    sigma: np.ndarray
    sigma_next: float
    var_forecast: float
    es_forecast: float
    loglik: float
    diagnostics: dict = field(default_factory=dict)

    def forecast_from(self, returns) -> tuple[float, float]:
        r = np.ascontiguousarray(returns, dtype=float)
        s2 = _kernels.garch_variance(self.omega, self.gamma, self.delta, r, self.s2_init)
        v1, e1 = standardized_t_var_es(self.alpha, self.nu)
        s = math.sqrt(s2[-1])
        return v1 * s, e1 * s


def _t_log_const(nu: float) -> float:
    return log_gamma(0.5 * (nu + 1.0)) - log_gamma(0.5 * nu) - 0.5 * math.log(math.pi * (nu - 2.0))


def fit_garch_t(
    returns,
    alpha: float = 0.025,
    cfg: MultiStartConfig = MultiStartConfig(n_candidates=500),
) -> GarchTFit:
    """Maximum likelihood GARCH(1,1) with unit-variance Student-t errors.

    ``sigma_1^2`` is the sample variance. Parameters are kept inside
    ``omega > 0``, ``gamma, delta >= 0``, ``gamma + delta < 1``, ``nu > 2``.
    """
    r = _check_returns(returns)
    s2_0 = float(np.var(r))

    def objective(th):
        w, g, d, nu = th
        if g + d >= 1.0 or w <= 0 or nu <= 2.0:
            return math.inf
        return _kernels.garch_t_negloglik(w, g, d, nu, _t_log_const(nu), r, s2_0)

    box = BoxConstraints(np.array([1e-8, 0.0, 0.0, 2.05]), np.array([np.inf, 1.0, 1.0, 500.0]))
    sampling = (np.array([0.0, 0.0, 0.5, 3.0]), np.array([0.2 * s2_0, 0.3, 1.0, 30.0]))
    res = minimize_multistart(objective, 4, cfg, box, sampling_bounds=sampling,
                              starts=[[0.05 * s2_0, 0.08, 0.9, 8.0]])
    w, g, d, nu = (float(v) for v in res.x)
    if not math.isfinite(res.fun):
        raise OptimizationError("GARCH-t likelihood is not finite", res.diagnostics)
    s2 = _kernels.garch_variance(w, g, d, r, s2_0)
    v1, e1 = standardized_t_var_es(alpha, nu)
    s_next = math.sqrt(s2[-1])
    return GarchTFit(w, g, d, nu, alpha, s2_0, np.sqrt(s2[:-1]), s_next,
                     v1 * s_next, e1 * s_next, -float(res.fun), res.diagnostics)
