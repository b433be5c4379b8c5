"""Compiled recursions shared by the quantile, expectile and GARCH fitters."""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def caviar_path(b0, bpos, bneg, b2, r, q0):
    n = r.shape[0]
    q = np.empty(n)
    q[0] = q0
    for t in range(1, n):
        x = r[t - 1]
        q[t] = b0 + (bpos * x if x > 0.0 else -bneg * x) + b2 * q[t - 1]
    return q


@njit(cache=True)
def caviar_next(b0, bpos, bneg, b2, r_last, q_last):
    x = r_last
    return b0 + (bpos * x if x > 0.0 else -bneg * x) + b2 * q_last


@njit(cache=True)
def caviar_loss(b0, bpos, bneg, b2, r, q0, alpha):
    # mean pinball loss of the filtered path; +inf when the path blows up
    n = r.shape[0]
    q = q0
    total = 0.0
    for t in range(n):
        if t > 0:
            x = r[t - 1]
            q = b0 + (bpos * x if x > 0.0 else -bneg * x) + b2 * q
        u = r[t] - q
        total += (alpha - 1.0) * u if u < 0.0 else alpha * u
    total /= n
    if not math.isfinite(total):
        return math.inf
    return total


@njit(cache=True)
def care_loss(b0, b1, b2, r, mu0, tau):
    # mean asymmetric least squares loss of an SAV expectile path
    n = r.shape[0]
    mu = mu0
    total = 0.0
    for t in range(n):
        if t > 0:
            mu = b0 + b1 * abs(r[t - 1]) + b2 * mu
        u = r[t] - mu
        total += (1.0 - tau) * u * u if u < 0.0 else tau * u * u
    total /= n
    if not math.isfinite(total):
        return math.inf
    return total


@njit(cache=True)
def es_caviar_paths(b0, bpos, bneg, b2, g0, g1, g2, mult, r, q0, x0):
    """VaR and ES paths of the additive (mult=False) or multiplicative model."""
    n = r.shape[0]
    q = np.empty(n)
    es = np.empty(n)
    q[0] = q0
    x = x0
    for t in range(n):
        if t > 0:
            rp = r[t - 1]
            q[t] = b0 + (bpos * rp if rp > 0.0 else -bneg * rp) + b2 * q[t - 1]
            if not mult and rp <= q[t - 1]:
                x = g0 + g1 * (q[t - 1] - rp) + g2 * x
        if mult:
            es[t] = (1.0 + math.exp(g0)) * q[t]
        else:
            es[t] = q[t] - x
    return q, es


@njit(cache=True)
def al_score_sum(r, q, es, alpha):
    # aggregate AL log score; +inf when any ES is non-negative or non-finite
    total = 0.0
    for t in range(r.shape[0]):
        e = es[t]
        if not (e < 0.0) or not math.isfinite(q[t]):
            return math.inf
        ind = 1.0 if r[t] <= q[t] else 0.0
        total += -math.log((alpha - 1.0) / e) - (r[t] - q[t]) * (alpha - ind) / (alpha * e)
    return total


@njit(cache=True)
def es_caviar_loss(b0, bpos, bneg, b2, g0, g1, g2, mult, r, q0, x0, alpha):
    q, es = es_caviar_paths(b0, bpos, bneg, b2, g0, g1, g2, mult, r, q0, x0)
    return al_score_sum(r, q, es, alpha)


@njit(cache=True)
def garch_variance(omega, gamma, delta, r, s2_0):
    n = r.shape[0]
    s2 = np.empty(n + 1)
    s2[0] = s2_0
    for t in range(1, n + 1):
        s2[t] = omega + gamma * r[t - 1] * r[t - 1] + delta * s2[t - 1]
    return s2


@njit(cache=True)
def garch_t_negloglik(omega, gamma, delta, nu, log_c, r, s2_0):
    # log_c: log normalising constant of the unit-variance t density
    n = r.shape[0]
    s2 = s2_0
    total = 0.0
    for t in range(n):
        if t > 0:
            s2 = omega + gamma * r[t - 1] * r[t - 1] + delta * s2
        if not (s2 > 0.0):
            return math.inf
        z2 = r[t] * r[t] / s2
        total -= log_c - 0.5 * math.log(s2) - 0.5 * (nu + 1.0) * math.log1p(z2 / (nu - 2.0))
    if not math.isfinite(total):
        return math.inf
    return total
