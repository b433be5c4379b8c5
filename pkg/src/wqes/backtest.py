"""Rolling one-step forecasting, loss aggregation and the Model Confidence Set."""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .baselines import EsCaviarForm, fit_care_sav, fit_es_caviar, fit_garch_t
from .caviar import CaviarSpec, fit_grid, grid_forecast_from
from .core import DomainError
from .optimize import MultiStartConfig, OptimizationError
from .wq import ES_CFG, EsTag, EsVariant, fit_es_weights, forecast_es

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# model descriptors


@dataclass(frozen=True)
class ModelSpec:
    """A forecaster named as in the result tables, e.g. ``WQ-Beta-3-SAV``,
    ``SA-No-BC-5-AS``, ``ES-CAViaR-Mult-SAV``, ``CARE-SAV`` or ``GARCH-t``."""

    name: str
    kind: str
    tag: Optional[EsTag] = None
    M: Optional[int] = None
    alpha1: float = 0.005
    spec: CaviarSpec = CaviarSpec.SAV
    form: Optional[EsCaviarForm] = None


_WQ_RE = re.compile(r"^(WQ-BETA|WQ-EW|WQ-UNC|SA-BC|SA-NO-BC)-(\d+)-(SAV|AS)$")
_ESC_RE = re.compile(r"^ES-CAVIAR-(ADD|MULT)-(SAV|AS)$")


def parse_model(name: str, alpha1: float = 0.005) -> ModelSpec:
    key = name.strip().upper()
    m = _WQ_RE.match(key)
    if m:
        tag = EsTag.parse(m.group(1))
        return ModelSpec(name, "wq", tag, int(m.group(2)), float(alpha1), CaviarSpec(m.group(3)))
    m = _ESC_RE.match(key)
    if m:
        return ModelSpec(name, "es_caviar", spec=CaviarSpec(m.group(2)), form=EsCaviarForm(m.group(1)))
    if key == "CARE-SAV":
        return ModelSpec(name, "care")
    if key == "GARCH-T":
        return ModelSpec(name, "garch_t")
    raise ValueError(f"unknown model {name!r}")


class WqForecaster:
    """First-stage grid plus second-stage weights, re-filtered on new data."""

    def __init__(self, qm, es_fit):
        self.qm = qm
        self.es_fit = es_fit
        self.n_clamped = 0

    def forecast_from(self, returns):
        fc = forecast_es(self.es_fit, grid_forecast_from(self.qm, returns))
        self.n_clamped += fc.clamped
        return fc.var, fc.es


def fit_model(
    model: ModelSpec,
    returns,
    alpha: float = 0.025,
    caviar_cfg: MultiStartConfig = MultiStartConfig(n_candidates=1000),
    es_cfg: MultiStartConfig = ES_CFG,
):
    """Fit ``model`` on ``returns``; the result exposes ``forecast_from(returns)``."""
    r = np.asarray(returns, dtype=float)
    if model.kind == "wq":
        variant = EsVariant(model.tag, model.M, model.alpha1)
        qm = fit_grid(r, variant.grid(alpha), model.spec, caviar_cfg)
        return WqForecaster(qm, fit_es_weights(r, qm, variant, es_cfg))
    if model.kind == "es_caviar":
        return fit_es_caviar(r, alpha, model.form, model.spec, caviar_cfg)
    if model.kind == "care":
        return fit_care_sav(r, alpha, cfg=caviar_cfg)
    if model.kind == "garch_t":
        return fit_garch_t(r, alpha, caviar_cfg.replace(n_candidates=min(caviar_cfg.n_candidates, 500)))
    raise ValueError(f"unknown model kind {model.kind!r}")


# --------------------------------------------------------------------------
# rolling window


@dataclass(frozen=True)
class RollingConfig:
    in_sample_n: int
    out_sample_m: int
    refit_interval: int = 1

    def __post_init__(self):
        if self.in_sample_n < 1 or self.out_sample_m < 1:
            raise DomainError("in- and out-of-sample sizes must be positive")
        if self.refit_interval < 1:
            raise DomainError("refit_interval must be at least 1")


@dataclass
class RollingForecast:
    name: str
    var: np.ndarray
    es: np.ndarray
    refit_steps: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def rolling_forecast(
    returns,
    model: ModelSpec,
    cfg: RollingConfig,
    alpha: float = 0.025,
    caviar_cfg: MultiStartConfig = MultiStartConfig(n_candidates=1000),
    es_cfg: MultiStartConfig = ES_CFG,
) -> RollingForecast:
    """One-step forecasts of ``r[n], ..., r[n+m-1]`` from a window of fixed length ``n``.

    Parameters are re-estimated every ``refit_interval`` steps; in between, the
    latest fit is re-filtered from its window start through the newest return.
    A failed re-estimation keeps the previous parameters.
    """
    r = np.asarray(returns, dtype=float)
    n, m = cfg.in_sample_n, cfg.out_sample_m
    if n + m > r.size:
        raise DomainError(f"need {n + m} returns for n={n}, m={m}; got {r.size}")
    var = np.empty(m)
    es = np.empty(m)
    out = RollingForecast(model.name, var, es)
    fitted, fit_start = None, 0
    for s in range(m):
        if s % cfg.refit_interval == 0:
            window = r[s:s + n]
            try:
                fitted = fit_model(model, window, alpha, caviar_cfg, es_cfg)
                fit_start = s
                out.refit_steps.append(s)
            except (OptimizationError, DomainError, ArithmeticError) as exc:
                if fitted is None:
                    raise
                logger.warning("%s: refit at step %d failed (%s); keeping previous fit",
                               model.name, s, exc)
                out.failures.append((s, str(exc)))
        var[s], es[s] = fitted.forecast_from(r[fit_start:s + n])
    return out


# --------------------------------------------------------------------------
# losses


def quantile_loss_series(returns, var, alpha: float) -> np.ndarray:
    r = np.asarray(returns, dtype=float)
    q = np.asarray(var, dtype=float)
    if r.shape != q.shape:
        raise DomainError(f"length mismatch: {r.shape} vs {q.shape}")
    u = r - q
    return (alpha - (u < 0)) * u


def aggregate_quantile_loss(returns, var, alpha: float) -> float:
    """Unnormalised sum of pinball losses over the evaluation period."""
    return float(np.sum(quantile_loss_series(returns, var, alpha)))


def joint_loss_series(returns, var, es, alpha: float) -> np.ndarray:
    r = np.asarray(returns, dtype=float)
    q = np.asarray(var, dtype=float)
    e = np.asarray(es, dtype=float)
    if not (r.shape == q.shape == e.shape):
        raise DomainError("returns, VaR and ES series differ in length")
    bad = np.flatnonzero(~(e < 0))
    if bad.size:
        raise DomainError(f"ES must be negative; step {int(bad[0])} has ES={e[bad[0]]}")
    ind = (r <= q).astype(float)
    return -np.log((alpha - 1.0) / e) - (r - q) * (alpha - ind) / (alpha * e)


def aggregate_joint_loss(returns, var, es, alpha: float) -> float:
    """Sum of AL joint VaR/ES scores over the evaluation period."""
    return float(np.sum(joint_loss_series(returns, var, es, alpha)))


@dataclass
class LossMatrix:
    losses: np.ndarray
    labels: list

    def __post_init__(self):
        self.losses = np.asarray(self.losses, dtype=float)
        if self.losses.ndim != 2 or self.losses.shape[1] != len(self.labels):
            raise DomainError("loss matrix must be m x K with K labels")
        if not np.all(np.isfinite(self.losses)):
            raise DomainError("loss matrix has non-finite entries")


# --------------------------------------------------------------------------
# Model Confidence Set


@dataclass
class McsResult:
    included: list
    eliminated: list
    pvalues: dict
    method: str
    level: float


def _block_bootstrap_means(losses: np.ndarray, block_length: int, n_boot: int, seed: int):
    """Moving-block bootstrap means of each column, shape (n_boot, K)."""
    m = losses.shape[0]
    n_blocks = math.ceil(m / block_length)
    rem = m - (n_blocks - 1) * block_length
    csum = np.vstack([np.zeros(losses.shape[1]), np.cumsum(losses, axis=0)])
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, m - block_length + 1, size=(n_boot, n_blocks))
    full = csum[starts[:, :-1] + block_length] - csum[starts[:, :-1]]
    last = csum[starts[:, -1] + rem] - csum[starts[:, -1]]
    return (full.sum(axis=1) + last) / m


def _studentize(diff: np.ndarray, boot: np.ndarray):
    """``diff / sd`` and centred bootstrap draws over ``sd``; 0/0 -> 0, x/0 -> +-inf."""
    centred = boot - diff
    sd = np.sqrt(np.mean(centred ** 2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(sd > 0, diff / sd, np.where(diff == 0, 0.0, np.sign(diff) * np.inf))
        tb = np.where(sd > 0, centred / np.where(sd > 0, sd, 1.0), 0.0)
    return t, tb


def mcs(
    loss_matrix: LossMatrix,
    level: float = 0.75,
    method: str = "R",
    block_length: Optional[int] = None,
    n_boot: int = 1000,
    seed: int = 0,
) -> McsResult:
    """Model Confidence Set by sequential elimination.

    The equivalence test uses the largest absolute studentized pairwise loss
    differential (``R``) or the sum of squared ones over pairs (``SQ``). The
    model eliminated at each step has the largest studentized loss relative
    to the average of the remaining models. Models whose MCS p-value is at
    least ``1 - level`` survive.
    """
    method = method.upper()
    if method not in ("R", "SQ"):
        raise ValueError("method must be 'R' or 'SQ'")
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    L = loss_matrix.losses
    labels = list(loss_matrix.labels)
    m, K = L.shape
    if K == 1:
        return McsResult(labels, [], {labels[0]: 1.0}, method, level)
    if m < 50:
        raise DomainError(f"MCS needs at least 50 loss observations, got {m}")
    bl = block_length or math.ceil(m ** (1.0 / 3.0))
    means = L.mean(axis=0)
    boot = _block_bootstrap_means(L, bl, n_boot, seed)

    alive = list(range(K))
    order, pvals = [], []
    while len(alive) > 1:
        idx = np.array(alive)
        mu, bmu = means[idx], boot[:, idx]
        i, j = np.triu_indices(idx.size, k=1)
        t_pair, tb_pair = _studentize(mu[i] - mu[j], bmu[:, i] - bmu[:, j])
        if method == "R":
            stat = np.max(np.abs(t_pair))
            bstat = np.max(np.abs(tb_pair), axis=1)
        else:
            stat = np.sum(t_pair ** 2)
            bstat = np.sum(tb_pair ** 2, axis=1)
        p = float(np.mean(bstat >= stat)) if math.isfinite(stat) else 0.0
        t_avg, _ = _studentize(mu - mu.mean(), bmu - bmu.mean(axis=1, keepdims=True))
        worst = int(np.argmax(t_avg))
        order.append(int(idx[worst]))
        pvals.append(p)
        alive.remove(int(idx[worst]))
    order.append(alive[0])
    pvals.append(1.0)
    mcs_p = np.maximum.accumulate(pvals)
    size = 1.0 - level
    pvalues = {labels[k]: float(pv) for k, pv in zip(order, mcs_p)}
    included = [labels[k] for k in range(K) if pvalues[labels[k]] >= size]
    eliminated = [labels[k] for k in order if pvalues[labels[k]] < size]
    return McsResult(included, eliminated, pvalues, method, level)
