"""Scaled noncentral chi-squared distribution with one degree of freedom.

If ``W ~ N(0, 1)`` then ``b * (W + sqrt(lam))**2`` has this law.  The density
is evaluated through the closed form

    f(u) = exp(-(u + lam)/2) * cosh(sqrt(lam * u)) / sqrt(2 pi u),   u = x / b

in log space, with log-cosh computed without overflow.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_LOG_2PI = np.log(2.0 * np.pi)
_LOG2 = np.log(2.0)


@dataclass(frozen=True)
class ScaledNcx2Params:
    noncentrality: float
    scale: float

    def __post_init__(self):
        if not self.noncentrality >= 0:
            raise ValueError("noncentrality must be nonnegative")
        if not self.scale > 0:
            raise ValueError("scale must be positive")


def logcosh(z):
    z = np.abs(z)
    return z + np.log1p(np.exp(-2.0 * z)) - _LOG2


def _tanh_over_s(s):
    s = np.asarray(s, dtype=float)
    out = np.ones_like(s)
    big = s > 1e-4
    out[big] = np.tanh(s[big]) / s[big]
    small = ~big
    out[small] = 1.0 - s[small] ** 2 / 3.0
    return out


def logpdf(x, lam, b):
    """Log density at ``x > 0`` for noncentrality ``lam`` and scale ``b``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("ncx2 density requires x > 0")
    lam = np.asarray(lam, dtype=float)
    b = np.asarray(b, dtype=float)
    u = x / b
    out = -0.5 * (u + lam) + logcosh(np.sqrt(lam * u)) - 0.5 * (_LOG_2PI + np.log(u)) - np.log(b)
    return float(out) if out.ndim == 0 else out


def logpdf_grad(x, lam, b):
    """Log density and its partial derivatives with respect to ``lam`` and ``b``.

    Returns ``(logp, dlogp_dlam, dlogp_db)``, elementwise.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    b = np.asarray(b, dtype=float)
    u = x / b
    s = np.sqrt(lam * u)
    t = _tanh_over_s(s)
    logp = -0.5 * (u + lam) + logcosh(s) - 0.5 * (_LOG_2PI + np.log(u)) - np.log(b)
    d_lam = -0.5 + 0.5 * u * t
    d_u = -0.5 + 0.5 * lam * t - 0.5 / u
    d_b = -d_u * u / b - 1.0 / b
    return logp, d_lam, d_b


def mean(p: ScaledNcx2Params) -> float:
    return p.scale * (1.0 + p.noncentrality)


def variance(p: ScaledNcx2Params) -> float:
    return p.scale**2 * 2.0 * (1.0 + 2.0 * p.noncentrality)


def sample(p: ScaledNcx2Params, rng: np.random.Generator, n: int):
    if n < 1:
        raise ValueError("n must be at least 1")
    w = rng.standard_normal(n)
    return p.scale * (w + np.sqrt(p.noncentrality)) ** 2
