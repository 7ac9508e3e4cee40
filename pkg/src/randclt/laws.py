"""Closed-form limit laws used as oracles."""
from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import stats
from scipy.special import ndtr

KOLMOGOROV_SWITCH = 0.2
_TERM_TOL = 1e-16


def normal_cdf(x):
    return ndtr(np.asarray(x, dtype=float))


def kolmogorov_cdf(x):
    """``P(sup |B(t)| <= x)`` for a Brownian bridge ``B``.

    Uses ``sum_k (-1)^k exp(-2 k^2 x^2)`` for ``x >= 0.2`` and the theta-dual
    series ``sqrt(2 pi)/x sum_k exp(-(2k-1)^2 pi^2 / (8 x^2))`` below, both
    truncated once a term drops under 1e-16.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.zeros_like(x)
    big = x >= KOLMOGOROV_SWITCH
    small = (x > 0) & ~big
    if np.any(big):
        xb = x[big]
        acc = np.ones_like(xb)
        k = 1
        while True:
            term = np.exp(-2.0 * k * k * xb * xb)
            acc += 2.0 * (-1) ** k * term
            if np.all(term < _TERM_TOL):
                break
            k += 1
        out[big] = acc
    if np.any(small):
        xs = x[small]
        acc = np.zeros_like(xs)
        k = 1
        while True:
            term = np.exp(-((2 * k - 1) ** 2) * math.pi ** 2 / (8.0 * xs * xs))
            acc += term
            if np.all(term < _TERM_TOL * np.maximum(acc, 1e-300)) or k > 50:
                break
            k += 1
        out[small] = math.sqrt(2.0 * math.pi) / xs * acc
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def kolmogorov_sf(x):
    """``1 - kolmogorov_cdf(x)`` without cancellation in the upper tail."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.ones_like(x)
    tail = x >= 1.0
    body = (x > 0) & ~tail
    if np.any(tail):
        xt = x[tail]
        acc = np.zeros_like(xt)
        k = 1
        while True:
            term = np.exp(-2.0 * k * k * xt * xt)
            acc += 2.0 * (-1) ** (k - 1) * term
            if np.all(term < _TERM_TOL * np.maximum(acc, 1e-300)) or k > 100:
                break
            k += 1
        out[tail] = acc
    if np.any(body):
        out[body] = 1.0 - kolmogorov_cdf(x[body])
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def wiener_sup_cdf(x):
    """``P(sup_{[0,1]} W <= x) = 2 Phi(x) - 1`` (reflection principle)."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0, 2.0 * ndtr(np.maximum(x, 0.0)) - 1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def wiener_abs_sup_cdf(x):
    """``P(sup_{[0,1]} |W| <= x) = (4/pi) sum_k (-1)^k/(2k+1) exp(-(2k+1)^2 pi^2/(8x^2))``."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.zeros_like(x)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        acc = np.zeros_like(xp)
        for k in range(200):
            term = np.exp(-((2 * k + 1) ** 2) * math.pi ** 2 / (8.0 * xp * xp)) / (2 * k + 1)
            acc += (-1) ** k * term
            if np.all(term < _TERM_TOL):
                break
        out[pos] = 4.0 / math.pi * acc
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def wiener_integral_cdf(x):
    """``int_0^1 W(t) dt`` is ``N(0, 1/3)``."""
    return ndtr(np.asarray(x, dtype=float) * math.sqrt(3.0))


def _bvn_chunk(h, k, r, nodes, weights):
    theta_max = math.asin(r)
    # Gauss-Legendre nodes mapped from [-1, 1] to [0, asin r]
    th = 0.5 * theta_max * (nodes + 1.0)
    w = 0.5 * theta_max * weights
    s = np.sin(th)[:, None]
    c2 = np.cos(th)[:, None] ** 2
    hh = h[None, :]
    kk = k[None, :]
    integrand = np.exp(-(hh * hh + kk * kk - 2.0 * hh * kk * s) / (2.0 * c2))
    return ndtr(h) * ndtr(k) + (w @ integrand) / (2.0 * math.pi)


def bivariate_normal_cdf(h, k, rho: float, chunk: int = 200_000):
    """``P(Z1 <= h, Z2 <= k)`` for standard normals with correlation ``rho``.

    Integrates ``d/d rho`` of the CDF (Plackett's identity) over the
    correlation path in angle form with Gauss-Legendre quadrature.  Infinite
    arguments are allowed.
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    k = np.atleast_1d(np.asarray(k, dtype=float))
    h, k = np.broadcast_arrays(h, k)
    h = h.ravel()
    k = k.ravel()
    out = np.empty(h.shape)
    if rho >= 1.0:
        return ndtr(np.minimum(h, k))
    if rho <= -1.0:
        return np.maximum(ndtr(h) + ndtr(k) - 1.0, 0.0)
    hinf = np.isposinf(h)
    kinf = np.isposinf(k)
    neg = np.isneginf(h) | np.isneginf(k)
    out[hinf] = ndtr(k[hinf])
    out[kinf] = ndtr(h[kinf])
    out[neg] = 0.0
    finite = ~(hinf | kinf | neg)
    if rho == 0.0:
        out[finite] = ndtr(h[finite]) * ndtr(k[finite])
        return out
    n_nodes = 24 if abs(rho) < 0.9 else 96
    nodes, weights = leggauss(n_nodes)
    idx = np.flatnonzero(finite)
    for start in range(0, len(idx), chunk):
        sel = idx[start:start + chunk]
        out[sel] = _bvn_chunk(h[sel], k[sel], rho, nodes, weights)
    return np.clip(out, 0.0, 1.0)


def multivariate_normal_cdf(x, mean, cov):
    """Normal orthant CDF for ``l >= 3`` via scipy; ``+inf`` entries allowed."""
    x = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.diag(cov))
    cap = mean + 40.0 * sd
    x = np.where(np.isposinf(x), cap, x)
    out = np.zeros(x.shape[0])
    ok = ~np.any(np.isneginf(x), axis=1)
    if np.any(ok):
        dist = stats.multivariate_normal(mean, cov)
        out[ok] = np.atleast_1d(dist.cdf(x[ok]))
    return out
