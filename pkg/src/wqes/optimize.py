"""Multi-start minimisation used by every fitter in the package.

Stage 1 scores a cloud of random candidate vectors; stage 2 polishes the best
few with a Nelder-Mead simplex followed by a bounded quasi-Newton run using
central-difference gradients. Non-finite objective values are treated as
``+inf`` during candidate screening and as a large finite penalty inside the
local searches.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize as _sopt

from .core import DomainError

logger = logging.getLogger(__name__)

PENALTY = 1e10


class OptimizationError(RuntimeError):
    """Raised when no finite objective value could be found."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class MultiStartConfig:
    """Settings of the two-stage multi-start search.

    ``sample_low``/``sample_high`` define the uniform interval each candidate
    coordinate is drawn from; callers can override it per parameter through
    ``sampling_bounds`` of :func:`minimize_multistart`.
    """

    n_candidates: int = 10_000
    n_refine: int = 2
    sample_low: float = 0.0
    sample_high: float = 1.0
    rng_seed: int = 0
    max_iterations: int = 2000
    gradient_tolerance: float = 1e-6
    simplex_xtol: float = 1e-8
    simplex_ftol: float = 1e-10
    max_rounds: int = 3

    def __post_init__(self):
        if self.n_candidates < 1 or self.n_refine < 1:
            raise ValueError("n_candidates and n_refine must be positive")
        if self.n_refine > self.n_candidates:
            raise ValueError("n_refine cannot exceed n_candidates")
        if self.max_iterations < 1 or self.gradient_tolerance <= 0:
            raise ValueError("max_iterations and gradient_tolerance must be positive")

    def replace(self, **kw) -> "MultiStartConfig":
        vals = {f: getattr(self, f) for f in self.__dataclass_fields__}
        vals.update(kw)
        return MultiStartConfig(**vals)


@dataclass(frozen=True)
class BoxConstraints:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, dim: int) -> "BoxConstraints":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    def project(self, x):
        return np.clip(x, self.lower, self.upper)

    @property
    def is_bounded(self) -> bool:
        return bool(np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper)))

    def as_scipy(self):
        return [
            (None if not math.isfinite(lo) else lo, None if not math.isfinite(hi) else hi)
            for lo, hi in zip(self.lower, self.upper)
        ]


@dataclass
class LocalResult:
    x: np.ndarray
    fun: float
    n_iter: int
    converged: bool
    grad_norm: float


@dataclass
class MultiStartResult:
    x: np.ndarray
    fun: float
    diagnostics: dict = field(default_factory=dict)


def _safe(objective: Callable) -> Callable:
    def f(x):
        try:
            v = float(objective(x))
        except (FloatingPointError, ZeroDivisionError, OverflowError):
            return PENALTY
        return v if math.isfinite(v) else PENALTY

    return f


def numerical_gradient(f: Callable, x, box: Optional[BoxConstraints] = None) -> np.ndarray:
    """Central differences with step ``max(1e-6, 1e-6 |x_i|)``.

    Falls back to a one-sided difference when a central step would leave the
    box.
    """
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = max(1e-6, 1e-6 * abs(x[i]))
        up = x.copy()
        dn = x.copy()
        up[i] += h
        dn[i] -= h
        if box is not None and up[i] > box.upper[i]:
            up[i] = x[i]
        if box is not None and dn[i] < box.lower[i]:
            dn[i] = x[i]
        g[i] = (f(up) - f(dn)) / (up[i] - dn[i])
    return g


def minimize_local(
    objective: Callable,
    start,
    box: Optional[BoxConstraints] = None,
    gradient_tolerance: float = 1e-6,
    max_iterations: int = 2000,
) -> LocalResult:
    """Quasi-Newton (L-BFGS-B) descent from ``start`` with numerical gradients.

    The returned value never exceeds ``objective(start)``.
    """
    x0 = np.asarray(start, dtype=float).copy()
    f0 = float(objective(x0))
    if not math.isfinite(f0):
        raise DomainError("objective is not finite at the starting point")
    if box is not None:
        x0 = box.project(x0)
        f0 = float(objective(x0))
    f = _safe(objective)
    res = _sopt.minimize(
        f,
        x0,
        jac=lambda x: numerical_gradient(f, x, box),
        method="L-BFGS-B",
        bounds=box.as_scipy() if box is not None else None,
        options={
            "maxiter": max_iterations,
            "gtol": gradient_tolerance,
            "ftol": 1e-15,
            "maxls": 50,
        },
    )
    x, fx = np.asarray(res.x, dtype=float), float(res.fun)
    if not fx <= f0:
        x, fx = x0, f0
    grad = numerical_gradient(f, x, box)
    if box is not None:
        # only the free directions count toward stationarity
        at_lo = (x <= box.lower) & (grad > 0)
        at_hi = (x >= box.upper) & (grad < 0)
        grad = np.where(at_lo | at_hi, 0.0, grad)
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
    return LocalResult(x, fx, int(res.nit), gnorm <= gradient_tolerance, gnorm)


def _simplex(f: Callable, x0, box: BoxConstraints, cfg: MultiStartConfig):
    res = _sopt.minimize(
        f,
        x0,
        method="Nelder-Mead",
        bounds=box.as_scipy() if box.is_bounded else None,
        options={
            "maxiter": cfg.max_iterations,
            "maxfev": 4 * cfg.max_iterations,
            "xatol": cfg.simplex_xtol,
            "fatol": cfg.simplex_ftol,
            "adaptive": x0.size > 4,
        },
    )
    return np.asarray(res.x, dtype=float), float(res.fun), int(res.nfev)


def refine(objective: Callable, start, box: BoxConstraints, cfg: MultiStartConfig):
    """Alternate simplex and quasi-Newton passes until neither helps."""
    f = _safe(objective)
    x = box.project(np.asarray(start, dtype=float))
    fx = f(x)
    nfev = 0
    for _ in range(cfg.max_rounds):
        prev = fx
        xs, fs, n = _simplex(f, x, box, cfg)
        nfev += n
        if fs <= fx:
            x, fx = box.project(xs), f(box.project(xs))
        if fx < PENALTY:
            loc = minimize_local(f, x, box, cfg.gradient_tolerance, cfg.max_iterations)
            if loc.fun <= fx:
                x, fx = loc.x, loc.fun
        if prev - fx <= cfg.simplex_ftol * max(1.0, abs(fx)):
            break
    return x, fx, nfev


def minimize_multistart(
    objective: Callable,
    dim: int,
    cfg: MultiStartConfig = MultiStartConfig(),
    box: Optional[BoxConstraints] = None,
    sampling_bounds: Optional[tuple[Sequence[float], Sequence[float]]] = None,
    starts: Optional[Sequence[Sequence[float]]] = None,
) -> MultiStartResult:
    """Minimise ``objective`` over ``dim`` parameters with random restarts.

    Parameters
    ----------
    objective : callable
        Maps a parameter vector to a float. Must be reentrant.
    dim : int
    cfg : MultiStartConfig
    box : BoxConstraints, optional
        Hard bounds, enforced on candidates and in every local search.
    sampling_bounds : (low, high), optional
        Per-parameter override of the candidate sampling interval.
    starts : sequence of vectors, optional
        Deterministic candidates scored alongside the random ones (they come
        first, so they win ties).

    Returns
    -------
    MultiStartResult
        ``diagnostics`` holds the best stage-1 value and per-start results.
    """
    box = box if box is not None else BoxConstraints.unbounded(dim)
    if box.lower.size != dim:
        raise ValueError("box dimension does not match dim")
    if sampling_bounds is None:
        low = np.full(dim, cfg.sample_low)
        high = np.full(dim, cfg.sample_high)
    else:
        low = np.asarray(sampling_bounds[0], dtype=float)
        high = np.asarray(sampling_bounds[1], dtype=float)
    rng = np.random.default_rng(cfg.rng_seed)
    cands = low + (high - low) * rng.random((cfg.n_candidates, dim))
    if starts is not None and len(starts):
        cands = np.vstack([np.atleast_2d(np.asarray(starts, dtype=float)), cands])
    cands = box.project(cands)

    values = np.empty(cands.shape[0])
    for i, c in enumerate(cands):
        try:
            v = float(objective(c))
        except (FloatingPointError, ZeroDivisionError, OverflowError):
            v = math.inf
        values[i] = v if math.isfinite(v) else math.inf
    finite = np.isfinite(values) & (values < PENALTY)
    diagnostics = {"n_candidates": int(cands.shape[0]), "n_finite": int(finite.sum())}
    if not finite.any():
        raise OptimizationError("objective not finite at any candidate", diagnostics)

    order = np.argsort(values, kind="stable")
    best_stage1 = float(values[order[0]])
    diagnostics["best_candidate_value"] = best_stage1

    runs = []
    for idx in order[: cfg.n_refine]:
        if not math.isfinite(values[idx]):
            break
        x, fx, nfev = refine(objective, cands[idx], box, cfg)
        runs.append((fx, int(idx), x, nfev))
    runs.sort(key=lambda t: (t[0], t[1]))
    fx, idx, x, _ = runs[0]
    if not fx <= best_stage1:
        x, fx = cands[order[0]].copy(), best_stage1
    diagnostics["refined"] = [(int(i), float(v)) for v, i, _, _ in runs]
    diagnostics["n_function_evals"] = int(sum(r[3] for r in runs))
    logger.debug("multistart best %.6g (stage 1 %.6g)", fx, best_stage1)
    return MultiStartResult(np.asarray(x, dtype=float), float(fx), diagnostics)
