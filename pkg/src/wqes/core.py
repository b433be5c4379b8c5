"""Special functions and small distributional helpers.

Everything here is a pure function of its arguments. The Student-t routines
work in the plain (unit-scale) parameterization; :func:`standardized_t_scale`
gives the factor that turns a draw into a unit-variance one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


# Lanczos approximation, g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def log_gamma(x: float) -> float:
    """Natural log of ``|Gamma(x)|`` for real ``x`` not a non-positive integer."""
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"log_gamma needs a finite argument, got {x}")
    if x <= 0.0 and x == math.floor(x):
        raise DomainError(f"log_gamma has a pole at {x}")
    if x < 0.5:
        # reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        return math.log(math.pi / abs(math.sin(math.pi * x))) - log_gamma(1.0 - x)
    if x == math.floor(x) and x <= 30.0:
        # exact at small integers so that Beta(1, 1) and friends are exact
        return math.log(math.factorial(int(x) - 1))
    x -= 1.0
    acc = _LANCZOS_COEF[0]
    for k in range(1, len(_LANCZOS_COEF)):
        acc += _LANCZOS_COEF[k] / (x + k)
    t = x + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (x + 0.5) * math.log(t) - t + math.log(acc)


@dataclass(frozen=True)
class BetaWeightParams:
    a: float
    b: float

    def __post_init__(self):
        for name in ("a", "b"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"Beta weight shape {name} must be positive, got {v}")


@dataclass(frozen=True)
class StudentTParams:
    nu: float

    def __post_init__(self):
        if not (math.isfinite(self.nu) and self.nu > 2):
            raise DomainError(f"degrees of freedom must exceed 2, got {self.nu}")


def beta_weight(x, p: BetaWeightParams):
    """Beta-density shaped weight ``x^(a-1) (1-x)^(b-1) / B(a, b)``.

    The weights are not normalised across a grid. At the endpoints ``0**0`` is
    taken as 1, so ``beta_weight(0, a=1, b)`` and ``beta_weight(1, a, b=1)`` are
    finite.

    Parameters
    ----------
    x : float or array_like
        Abscissae in ``[0, 1]``.
    p : BetaWeightParams

    Returns
    -------
    float or ndarray
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("beta_weight abscissae must lie in [0, 1]")
    a, b = p.a, p.b
    log_norm = log_gamma(a + b) - log_gamma(a) - log_gamma(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        # numpy already evaluates 0.0 ** 0.0 as 1.0
        out = np.power(arr, a - 1.0) * np.power(1.0 - arr, b - 1.0) * math.exp(log_norm)
    if out.ndim == 0:
        return float(out)
    return out


def _betacf(a: float, b: float, x: float, tol: float = 1e-15, max_iter: int = 500) -> float:
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if a <= 0 or b <= 0:
        raise DomainError("incomplete beta shapes must be positive")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        log_gamma(a + b) - log_gamma(a) - log_gamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _nu(p) -> float:
    return p.nu if isinstance(p, StudentTParams) else StudentTParams(float(p)).nu


def student_t_pdf(x, p: StudentTParams):
    """Density of the Student-t distribution with ``p.nu`` degrees of freedom."""
    nu = _nu(p)
    log_c = log_gamma(0.5 * (nu + 1.0)) - log_gamma(0.5 * nu) - 0.5 * math.log(nu * math.pi)
    arr = np.asarray(x, dtype=float)
    out = np.exp(log_c - 0.5 * (nu + 1.0) * np.log1p(arr * arr / nu))
    return float(out) if out.ndim == 0 else out


def _t_upper_tail(x: float, nu: float) -> float:
    """``P(T > |x|)``; near zero the complementary argument avoids cancellation."""
    x2 = x * x
    if x2 < nu:
        return 0.5 - 0.5 * regularized_incomplete_beta(x2 / (nu + x2), 0.5, 0.5 * nu)
    return 0.5 * regularized_incomplete_beta(nu / (nu + x2), 0.5 * nu, 0.5)


def _t_cdf_scalar(x: float, nu: float) -> float:
    if math.isnan(x):
        raise DomainError("student_t_cdf got NaN")
    if x == math.inf:
        return 1.0
    if x == -math.inf:
        return 0.0
    tail = _t_upper_tail(x, nu)
    return 1.0 - tail if x > 0 else tail


def student_t_cdf(x, p: StudentTParams):
    """Student-t distribution function, via the regularized incomplete beta."""
    nu = _nu(p)
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return _t_cdf_scalar(float(arr), nu)
    return np.array([_t_cdf_scalar(float(v), nu) for v in arr.ravel()]).reshape(arr.shape)


def student_t_inv_cdf(prob: float, p: StudentTParams, tol: float = 1e-14) -> float:
    """Quantile function of the Student-t distribution.

    Bisection on a bracket that is grown until it contains the root, followed
    by Newton steps that are rejected whenever they leave the bracket.
    """
    nu = _nu(p)
    prob = float(prob)
    if not (0.0 < prob < 1.0):
        raise DomainError(f"probability must lie in (0, 1), got {prob}")
    if prob == 0.5:
        return 0.0
    if prob < 0.5:
        return -student_t_inv_cdf(1.0 - prob, StudentTParams(nu), tol)
    # root of cdf(x) - prob on x > 0; work with the upper tail for accuracy
    target = 1.0 - prob

    def upper(x):
        return _t_upper_tail(x, nu)

    lo, hi = 0.0, 1.0
    while upper(hi) > target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise ArithmeticError("failed to bracket Student-t quantile")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if upper(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-3 * max(1.0, lo):
            break
    x = 0.5 * (lo + hi)
    for _ in range(100):
        g = upper(x) - target
        if abs(g) <= tol * target:
            break
        if g > 0:
            lo = x
        else:
            hi = x
        step = g / float(student_t_pdf(x, StudentTParams(nu)))
        x_new = x + step
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if x_new == x:
            break
        x = x_new
    return x


def standardized_t_scale(nu: float) -> float:
    """Factor ``sqrt((nu - 2) / nu)`` mapping a t draw to unit variance."""
    return math.sqrt((nu - 2.0) / nu)


def standardized_t_abs_mean(nu: float) -> float:
    """``E|eps|`` for a unit-variance Student-t innovation."""
    log_e = (
        math.log(2.0) + 0.5 * math.log(nu) + log_gamma(0.5 * (nu + 1.0))
        - 0.5 * math.log(math.pi) - math.log(nu - 1.0) - log_gamma(0.5 * nu)
    )
    return math.exp(log_e) * standardized_t_scale(nu)


def standardized_t_var_es(alpha: float, nu: float) -> tuple[float, float]:
    """Lower-tail VaR and ES of a unit-variance Student-t at level ``alpha``.

    Returns
    -------
    (var, es) : tuple of float
        Both negative for ``alpha < 0.5``.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    tp = StudentTParams(nu)
    q = student_t_inv_cdf(alpha, tp)
    s = standardized_t_scale(nu)
    es = -(student_t_pdf(q, tp) / alpha) * ((nu + q * q) / (nu - 1.0)) * s
    return q * s, es
