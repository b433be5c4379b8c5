"""CAViaR quantile recursions, their quantile-loss fits and grid assembly."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import DomainError
from .optimize import BoxConstraints, MultiStartConfig, minimize_multistart

MIN_OBS = 250
INIT_WINDOW = 100
BETA2_BOUND = 0.999


class CaviarSpec(str, enum.Enum):
    SAV = "SAV"
    AS = "AS"


@dataclass(frozen=True)
class CaviarParams:
    """Recursion coefficients.

    ``values`` is ``(b0, b1, b2)`` for SAV and ``(b0, b1_pos, b1_neg, b2)``
    for AS, where the positive/negative slopes multiply ``max(r, 0)`` and
    ``max(-r, 0)``.
    """

    spec: CaviarSpec
    values: tuple

    def __post_init__(self):
        n = 3 if self.spec == CaviarSpec.SAV else 4
        if len(self.values) != n:
            raise DomainError(f"{self.spec.value} takes {n} parameters, got {len(self.values)}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def kernel_args(self):
        v = self.values
        if self.spec == CaviarSpec.SAV:
            return v[0], v[1], v[1], v[2]
        return v

    @property
    def persistence(self) -> float:
        return self.values[-1]


@dataclass(frozen=True)
class QuantileGrid:
    levels: np.ndarray
    target_index: int

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.ndim != 1 or lv.size < 1:
            raise DomainError("grid needs at least one level")
        if lv[0] <= 0 or lv[-1] >= 1:
            raise DomainError("grid levels must lie in (0, 1)")
        if lv.size > 1:
            steps = np.diff(lv)
            if np.any(steps <= 0):
                raise DomainError("grid levels must be strictly increasing")
            if not np.allclose(steps, steps[0], rtol=1e-8, atol=1e-12):
                raise DomainError("grid levels must be equally spaced")
        if not 0 <= self.target_index < lv.size:
            raise DomainError("target index outside the grid")
        object.__setattr__(self, "levels", lv)

    @property
    def alpha(self) -> float:
        return float(self.levels[self.target_index])

    def __len__(self):
        return self.levels.size


@dataclass
class CaviarFit:
    alpha: float
    params: CaviarParams
    q_init: float
    path: np.ndarray
    forecast: float
    loss: float
    diagnostics: dict = field(default_factory=dict)

    def forecast_from(self, returns) -> float:
        """One-step forecast after filtering ``returns`` with the fitted parameters."""
        r = np.ascontiguousarray(returns, dtype=float)
        q = filter(self.params, r, self.q_init)
        return float(_kernels.caviar_next(*self.params.kernel_args(), r[-1], q[-1]))


@dataclass
class QuantileMatrix:
    """In-sample quantiles (N x G) and one-step forecasts (G,) over a grid.

    Rows are rearranged to be non-decreasing along the level axis.
    """

    values: np.ndarray
    forecasts: np.ndarray
    grid: QuantileGrid
    fits: list = field(default_factory=list)

    @property
    def target_column(self) -> np.ndarray:
        return self.values[:, self.grid.target_index]

    @property
    def target_forecast(self) -> float:
        return float(self.forecasts[self.grid.target_index])


def quantile_loss(returns, quantiles, alpha: float) -> float:
    """Mean pinball loss ``(1/N) sum (alpha - 1{r < q}) (r - q)``."""
    r = np.asarray(returns, dtype=float)
    q = np.asarray(quantiles, dtype=float)
    if r.shape != q.shape:
        raise DomainError(f"length mismatch: {r.shape} returns vs {q.shape} quantiles")
    u = r - q
    return float(np.mean((alpha - (u < 0)) * u))


def filter(params: CaviarParams, returns, q_init: float) -> np.ndarray:
    """Quantile path with ``Q_1 = q_init``."""
    r = np.ascontiguousarray(returns, dtype=float)
    return _kernels.caviar_path(*params.kernel_args(), r, float(q_init))


def rearrange(row):
    """Sort quantiles along the level axis (last axis) to remove crossings."""
    return np.sort(np.asarray(row, dtype=float), axis=-1)


def initial_quantile(returns, alpha: float) -> float:
    r = np.asarray(returns, dtype=float)
    return float(np.quantile(r[: min(INIT_WINDOW, r.size)], alpha))


def _sampling_bounds(spec: CaviarSpec, alpha: float):
    # intercept and slope carry the sign of the quantile
    s = -1.0 if alpha < 0.5 else 1.0
    if spec == CaviarSpec.SAV:
        lo, hi = [min(0, s), min(0, s), 0.0], [max(0, s), max(0, s), 1.0]
    else:
        lo, hi = [min(0, s), -1.0, min(0, s), 0.0], [max(0, s), 1.0, max(0, s), 1.0]
    return np.array(lo), np.array(hi)


def caviar_box(spec: CaviarSpec) -> BoxConstraints:
    dim = 3 if spec == CaviarSpec.SAV else 4
    lo = np.full(dim, -np.inf)
    hi = np.full(dim, np.inf)
    lo[-1], hi[-1] = -BETA2_BOUND, BETA2_BOUND
    return BoxConstraints(lo, hi)


def level_seed(seed: int, level: float) -> int:
    """Seed for the fit at one level, independent of grid composition and order."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(round(level * 1e9))])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def fit_caviar(
    returns,
    alpha: float,
    spec: CaviarSpec = CaviarSpec.SAV,
    cfg: MultiStartConfig = MultiStartConfig(),
    q_init: Optional[float] = None,
    starts: Optional[Sequence[Sequence[float]]] = None,
) -> CaviarFit:
    """Fit a CAViaR recursion at level ``alpha`` by minimising quantile loss.

    ``starts`` adds deterministic candidates, e.g. a SAV optimum embedded as
    ``(b0, b1, b1, b2)`` so an AS fit cannot end above it.
    """
    r = np.ascontiguousarray(returns, dtype=float)
    if r.ndim != 1 or r.size < MIN_OBS:
        raise DomainError(f"CAViaR fitting needs at least {MIN_OBS} returns, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise DomainError("returns contain non-finite values")
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    spec = CaviarSpec(spec)
    q0 = initial_quantile(r, alpha) if q_init is None else float(q_init)

    if spec == CaviarSpec.SAV:
        def objective(th):
            return _kernels.caviar_loss(th[0], th[1], th[1], th[2], r, q0, alpha)
        dim = 3
    else:
        def objective(th):
            return _kernels.caviar_loss(th[0], th[1], th[2], th[3], r, q0, alpha)
        dim = 4

    res = minimize_multistart(
        objective, dim, cfg, caviar_box(spec),
        sampling_bounds=_sampling_bounds(spec, alpha), starts=starts,
    )
    params = CaviarParams(spec, tuple(res.x))
    path = filter(params, r, q0)
    fc = float(_kernels.caviar_next(*params.kernel_args(), r[-1], path[-1]))
    return CaviarFit(alpha, params, q0, path, fc, float(res.fun), res.diagnostics)


def fit_levels(
    returns,
    levels: Sequence[float],
    spec: CaviarSpec = CaviarSpec.SAV,
    cfg: MultiStartConfig = MultiStartConfig(),
    cache: Optional[dict] = None,
) -> list:
    """Independent fits at each level; ``cache`` (keyed by level) is reused and filled."""
    fits = []
    for lv in levels:
        key = (CaviarSpec(spec).value, round(float(lv), 12))
        if cache is not None and key in cache:
            fits.append(cache[key])
            continue
        fit = fit_caviar(returns, float(lv), spec, cfg.replace(rng_seed=level_seed(cfg.rng_seed, lv)))
        if cache is not None:
            cache[key] = fit
        fits.append(fit)
    return fits


def assemble(fits: Sequence[CaviarFit], grid: QuantileGrid) -> QuantileMatrix:
    values = rearrange(np.column_stack([f.path for f in fits]))
    forecasts = rearrange(np.array([f.forecast for f in fits]))
    return QuantileMatrix(values, forecasts, grid, list(fits))


def fit_grid(
    returns,
    grid: QuantileGrid,
    spec: CaviarSpec = CaviarSpec.SAV,
    cfg: MultiStartConfig = MultiStartConfig(),
    cache: Optional[dict] = None,
) -> QuantileMatrix:
    """Fit every grid level separately, then rearrange each row and the forecasts."""
    return assemble(fit_levels(returns, grid.levels, spec, cfg, cache), grid)


def grid_forecast_from(qm: QuantileMatrix, returns) -> np.ndarray:
    """Rearranged one-step forecasts of all levels after filtering ``returns``."""
    return rearrange(np.array([f.forecast_from(returns) for f in qm.fits]))


def violation_rate(returns, quantiles) -> float:
    r = np.asarray(returns, dtype=float)
    return float(np.mean(r < np.asarray(quantiles, dtype=float)))
