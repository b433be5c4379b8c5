"""Expected Shortfall as an affine function of tail quantiles.

Five estimators share one shape, ``ES_t = w0 + sum_i w_i Q_{t, alpha_i}``:

========== ==================================== =====================
tag        weights                              fitted parameters
========== ==================================== =====================
WQ_BETA    Beta-density weights on an M+1 grid  ``(w0, a, b)``
WQ_EW      one common weight                    ``(w0, w1)``
WQ_UNC     free non-negative weights            ``(w0, w1..wM)``
SA_BC      ``1/M``                              ``w0``
SA_NO_BC   ``1/M``, no intercept                none
========== ==================================== =====================

Weights are fitted by minimising the aggregate AL joint VaR/ES score with
the target-level CAViaR quantile held fixed.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .caviar import QuantileGrid, QuantileMatrix
from .core import BetaWeightParams, DomainError, beta_weight, log_gamma
from .optimize import BoxConstraints, MultiStartConfig, minimize_multistart

logger = logging.getLogger(__name__)

#: Second-stage search: defaults plus 100 random restarts around them.
ES_CFG = MultiStartConfig(n_candidates=100, n_refine=2, rng_seed=0)

BETA_SHAPE_BOUNDS = (1e-3, 1e3)


class ScoreUndefinedError(DomainError):
    """The AL score needs strictly negative ES."""


class EsTag(str, enum.Enum):
    WQ_BETA = "WQ-Beta"
    WQ_EW = "WQ-EW"
    WQ_UNC = "WQ-UNC"
    SA_BC = "SA-BC"
    SA_NO_BC = "SA-No-BC"

    @classmethod
    def parse(cls, text: str) -> "EsTag":
        key = text.strip().upper().replace("_", "-")
        for tag in cls:
            if tag.value.upper() == key or tag.name.replace("_", "-") == key:
                return tag
        raise ValueError(f"unknown ES estimator {text!r}")


@dataclass(frozen=True)
class EsVariant:
    tag: EsTag
    M: int
    alpha1: float

    def __post_init__(self):
        object.__setattr__(self, "tag", EsTag(self.tag))
        if self.M < 2:
            raise DomainError(f"M must be at least 2, got {self.M}")
        if not 0 < self.alpha1 < 1:
            raise DomainError(f"alpha1 must lie in (0, 1), got {self.alpha1}")

    @property
    def label(self) -> str:
        return f"{self.tag.value}-{self.M}"

    def grid(self, alpha: float) -> QuantileGrid:
        return build_grid(alpha, self.alpha1, self.M, self.tag)


@dataclass
class EsWeightFit:
    tag: EsTag
    grid: QuantileGrid
    derived_weights: np.ndarray
    w0: float = 0.0
    beta_params: Optional[BetaWeightParams] = None
    w_scalar: Optional[float] = None
    w_vector: Optional[np.ndarray] = None
    loss: float = math.nan
    diagnostics: dict = field(default_factory=dict)

    @property
    def theta(self) -> float:
        """Sum of the quantile weights."""
        return float(np.sum(self.derived_weights))


@dataclass(frozen=True)
class EsForecast:
    es: float
    var: float
    components: np.ndarray
    clamped: bool = False


def build_grid(alpha: float, alpha1: float, M: int, tag: EsTag = EsTag.SA_BC) -> QuantileGrid:
    """Equally spaced levels ``alpha1, ..., alpha``; WQ-Beta gets one more point above."""
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0 < alpha1 < alpha:
        raise DomainError(f"need 0 < alpha1 < alpha, got alpha1={alpha1}, alpha={alpha}")
    if M < 2:
        raise DomainError(f"M must be at least 2, got {M}")
    eta = (alpha - alpha1) / (M - 1)
    n = M + 1 if EsTag(tag) == EsTag.WQ_BETA else M
    levels = alpha1 + eta * np.arange(n)
    levels[M - 1] = alpha
    return QuantileGrid(levels, M - 1)


def weights_from_beta(p: BetaWeightParams, G: int) -> np.ndarray:
    """``w_i = beta_weight(i / G)`` for ``i = 1..G``."""
    if G < 2:
        raise DomainError(f"G must be at least 2, got {G}")
    return np.asarray(beta_weight(np.arange(1, G + 1) / G, p), dtype=float)


def es_estimate(fit: EsWeightFit, q_row):
    """``w0 + q_row @ w`` for a single row or an (N, G) matrix."""
    q = np.asarray(q_row, dtype=float)
    if q.shape[-1] != fit.derived_weights.size:
        raise DomainError(
            f"quantile row has {q.shape[-1]} entries, weights have {fit.derived_weights.size}"
        )
    out = fit.w0 + q @ fit.derived_weights
    return float(out) if np.ndim(out) == 0 else out


def al_joint_loss(r, q, es, alpha: float):
    """AL log score ``-log((alpha-1)/es) - (r-q)(alpha - 1{r<=q})/(alpha es)``.

    Works elementwise on arrays. Raises ScoreUndefinedError if any ``es >= 0``.
    """
    r, q, es = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (r, q, es)))
    if np.any(~(es < 0)):
        raise ScoreUndefinedError("AL score requires ES < 0")
    ind = (r <= q).astype(float)
    out = -np.log((alpha - 1.0) / es) - (r - q) * (alpha - ind) / (alpha * es)
    return float(out) if out.ndim == 0 else out


def _weights(tag: EsTag, theta: np.ndarray, G: int, M: int) -> tuple[float, np.ndarray]:
    if tag == EsTag.SA_NO_BC:
        return 0.0, np.full(M, 1.0 / M)
    if tag == EsTag.SA_BC:
        return theta[0], np.full(M, 1.0 / M)
    if tag == EsTag.WQ_EW:
        return theta[0], np.full(M, theta[1])
    if tag == EsTag.WQ_UNC:
        return theta[0], theta[1:] ** 2
    a, b = theta[1], theta[2]
    x = np.arange(1, G + 1) / G
    log_norm = log_gamma(a + b) - log_gamma(a) - log_gamma(b)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        w = np.power(x, a - 1.0) * np.power(1.0 - x, b - 1.0) * math.exp(log_norm)
    return theta[0], w


def _search_setup(tag: EsTag, M: int):
    """Default start, sampling interval and box for each parameterisation."""
    if tag == EsTag.SA_BC:
        return [0.0], ([-0.5], [0.5]), None
    if tag == EsTag.WQ_EW:
        return [0.0, 1.0 / M], ([-0.5, 0.5 / M], [0.5, 2.0 / M]), None
    if tag == EsTag.WQ_UNC:
        v = math.sqrt(1.0 / M)
        return (
            [0.0] + [v] * M,
            ([-0.5] + [0.0] * M, [0.5] + [2.0 * v] * M),
            None,
        )
    lo, hi = BETA_SHAPE_BOUNDS
    return (
        [0.0, 1.0, 2.0],
        ([-0.5, 0.2, 0.5], [0.5, 5.0, 10.0]),
        BoxConstraints(np.array([-np.inf, lo, lo]), np.array([np.inf, hi, hi])),
    )


def fit_es_weights(
    returns,
    qm: QuantileMatrix,
    variant: EsVariant,
    cfg: MultiStartConfig = ES_CFG,
) -> EsWeightFit:
    """Fit the second-stage weights by minimising the aggregate AL score."""
    variant = EsVariant(EsTag(variant.tag), variant.M, variant.alpha1)
    tag, M = variant.tag, variant.M
    r = np.ascontiguousarray(returns, dtype=float)
    Q = np.ascontiguousarray(qm.values, dtype=float)
    G = Q.shape[1]
    expected = M + 1 if tag == EsTag.WQ_BETA else M
    if G != expected:
        raise DomainError(f"{variant.label} needs a {expected}-level grid, got {G}")
    if Q.shape[0] != r.size:
        raise DomainError("quantile matrix and returns differ in length")
    alpha = qm.grid.alpha
    q_target = np.ascontiguousarray(qm.target_column)

    def objective(theta):
        w0, w = _weights(tag, np.asarray(theta, dtype=float), G, M)
        if not np.all(np.isfinite(w)):
            return math.inf
        es = w0 + Q @ w
        return _kernels.al_score_sum(r, q_target, es, alpha)

    diagnostics = {}
    if tag == EsTag.SA_NO_BC:
        theta = np.zeros(0)
        loss = objective(theta)
    else:
        start, sampling, box = _search_setup(tag, M)
        res = minimize_multistart(
            objective, len(start), cfg, box, sampling_bounds=sampling, starts=[start]
        )
        theta, loss, diagnostics = res.x, res.fun, res.diagnostics

    w0, w = _weights(tag, theta, G, M)
    fit = EsWeightFit(tag, qm.grid, np.asarray(w, dtype=float), w0=float(w0),
                      loss=float(loss), diagnostics=diagnostics)
    if tag == EsTag.WQ_BETA:
        fit.beta_params = BetaWeightParams(float(theta[1]), float(theta[2]))
    elif tag == EsTag.WQ_EW:
        fit.w_scalar = float(theta[1])
    elif tag == EsTag.WQ_UNC:
        fit.w_vector = fit.derived_weights.copy()
    if not math.isfinite(fit.loss):
        logger.warning("%s: no weights give ES < 0 throughout the sample", variant.label)
    return fit


def forecast_es(fit: EsWeightFit, q_forecast_row) -> EsForecast:
    """One-step ES from forecast quantiles; ES above VaR is clamped to VaR."""
    q = np.asarray(q_forecast_row, dtype=float)
    comps = q * fit.derived_weights
    es = es_estimate(fit, q)
    var = float(q[fit.grid.target_index])
    clamped = es > var
    if clamped:
        logger.info("%s forecast ES %.6g above VaR %.6g; clamped", fit.tag.value, es, var)
        es = var
    return EsForecast(float(es), var, comps, bool(clamped))
