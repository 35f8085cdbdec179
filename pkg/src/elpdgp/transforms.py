"""Maps between raw log scores, shifted scores and ELPD values.

For a Gaussian expert with predictive sd ``sigma`` the raw log score is
``l = a - b * X`` with ``a = -0.5 * log(2 pi sigma^2)`` and ``X`` a noncentral
chi-squared(1) variable.  The shifted score ``l' = a - l`` is nonnegative and
power transforms of it, ``l'' = (l')**alpha``, are close to Gaussian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

CLAMP_TOL = 1e-9


@dataclass(frozen=True)
class TransformSpec:
    kind: str = "cube_root"
    power_alpha: float = 1.0 / 3.0

    def __post_init__(self):
        if self.kind not in ("cube_root", "power"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "cube_root" and self.power_alpha != 1.0 / 3.0:
            object.__setattr__(self, "power_alpha", 1.0 / 3.0)
        if not self.power_alpha > 0:
            raise ValueError("power_alpha must be positive")

    @property
    def alpha(self) -> float:
        return self.power_alpha


CUBE_ROOT = TransformSpec()


def offset_a(sigma):
    """Log-density of a Gaussian expert evaluated at its own mean."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)) or np.any(~np.isfinite(sigma)):
        raise ValueError("predictive sd must be positive and finite")
    out = -0.5 * np.log(2.0 * np.pi * sigma**2)
    return float(out) if out.ndim == 0 else out


def to_lprime(log_score, a, tol=CLAMP_TOL):
    """Shifted score ``a - l``.

    Values in ``[-tol, 0)`` come from rounding and are clamped to zero;
    anything further below zero means ``l`` exceeds the attainable maximum.
    """
    lp = np.asarray(a, dtype=float) - np.asarray(log_score, dtype=float)
    if np.any(lp < -tol):
        bad = np.flatnonzero(np.atleast_1d(lp) < -tol)
        raise ValueError(
            f"inconsistent score: log score exceeds its offset at index {bad.tolist()}"
        )
    lp = np.maximum(lp, 0.0)
    return float(lp) if lp.ndim == 0 else lp


def from_lprime(lprime, a):
    out = np.asarray(a, dtype=float) - np.asarray(lprime, dtype=float)
    return float(out) if out.ndim == 0 else out


def forward(lprime, spec: TransformSpec = CUBE_ROOT):
    x = np.asarray(lprime, dtype=float)
    if np.any(x < 0):
        raise ValueError("forward transform requires nonnegative input")
    out = np.cbrt(x) if spec.kind == "cube_root" else x**spec.alpha
    return float(out) if out.ndim == 0 else out


def inverse(y, spec: TransformSpec = CUBE_ROOT):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("inverse transform requires nonnegative input")
    out = y**3 if spec.kind == "cube_root" else y ** (1.0 / spec.alpha)
    return float(out) if out.ndim == 0 else out


def third_moment(mean, var):
    """E[X^3] for X ~ Normal(mean, var)."""
    return mean**3 + 3.0 * mean * var


def elpd_from_latent_cube(a, f, var):
    """ELPD implied by a cube-root latent value ``f`` and noise variance ``var``."""
    if np.any(np.asarray(var) <= 0):
        raise ValueError("noise variance must be positive")
    return a - third_moment(f, var)


def power_moment(f, var, alpha, full_output=False):
    """E[X^(1/alpha) 1{X >= 0}] for X ~ Normal(f, var).

    The negative half line is dropped rather than renormalized; with
    ``full_output`` the dropped probability mass is returned as well.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if var < 0:
        raise ValueError("variance must be nonnegative")
    p = 1.0 / alpha
    if var == 0:
        val = max(f, 0.0) ** p
        mass = 1.0 if f < 0 else 0.0
        return (val, mass) if full_output else val
    sd = math.sqrt(var)
    upper = f + 12.0 * sd
    mass = float(stats.norm.cdf(0.0, loc=f, scale=sd))
    if upper <= 0:
        return (0.0, mass) if full_output else 0.0
    lower = max(0.0, f - 12.0 * sd)

    def integrand(x):
        return x**p * math.exp(-0.5 * ((x - f) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))

    # A breakpoint at the mode keeps quad from stepping over a narrow peak.
    points = [f] if lower < f < upper else None
    val, err, info = integrate.quad(
        integrand, lower, upper, points=points, epsabs=0.0, epsrel=1e-10,
        limit=200, full_output=True,
    )[:3]
    if err > 1e-6 * max(abs(val), 1e-300) and err > 1e-12:
        raise ArithmeticError(f"quadrature did not converge (error estimate {err:.3g})")
    return (val, mass) if full_output else val


def elpd_from_latent_power(a, f, var, alpha, full_output=False):
    """ELPD for a power-``alpha`` latent value: ``a - E[X^(1/alpha)]``."""
    val, mass = power_moment(f, var, alpha, full_output=True)
    return (a - val, mass) if full_output else a - val
