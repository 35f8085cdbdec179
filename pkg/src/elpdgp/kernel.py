"""Squared-exponential ARD covariance.

Observation noise is never folded into the Gram matrix here; callers add
``noise_sd**2 * I`` where a likelihood needs it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

JITTER_LADDER = (1e-8, 1e-6, 1e-4)


class CholeskyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    signal_sd: float
    lengthscales: tuple
    noise_sd: float = 0.0
    jitter: float = 1e-8

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if not self.signal_sd > 0:
            raise ValueError("signal_sd must be positive")
        if len(ls) == 0 or any(not v > 0 for v in ls):
            raise ValueError("lengthscales must be positive")
        if self.noise_sd < 0 or self.jitter < 0:
            raise ValueError("noise_sd and jitter must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)


def _as_2d(Z, d):
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z.reshape(-1, d) if d > 1 or Z.size == 0 else Z.reshape(-1, 1)
    if Z.shape[1] != d:
        raise ValueError(f"expected {d} pooling dimensions, got {Z.shape[1]}")
    return Z


def se_ard(z_i, z_j, cfg: KernelConfig) -> float:
    z_i = np.atleast_1d(np.asarray(z_i, dtype=float))
    z_j = np.atleast_1d(np.asarray(z_j, dtype=float))
    if z_i.shape != (cfg.dim,) or z_j.shape != (cfg.dim,):
        raise ValueError("dimension mismatch between points and lengthscales")
    u = (z_i - z_j) / np.asarray(cfg.lengthscales)
    return float(cfg.signal_sd**2 * np.exp(-0.5 * u @ u))


def scaled_sqdist(Za, Zb, lengthscales):
    """Per-dimension squared distances divided by lengthscale^2, shape (d, na, nb)."""
    ls = np.asarray(lengthscales, dtype=float)
    diff = (Za[:, None, :] - Zb[None, :, :]) / ls
    return np.moveaxis(diff**2, -1, 0)


def cross_gram(Za, Zb, cfg: KernelConfig):
    Za = _as_2d(Za, cfg.dim)
    Zb = _as_2d(Zb, cfg.dim)
    r2 = scaled_sqdist(Za, Zb, cfg.lengthscales).sum(axis=0)
    return cfg.signal_sd**2 * np.exp(-0.5 * r2)


def gram(Z, cfg: KernelConfig):
    Z = _as_2d(Z, cfg.dim)
    K = cross_gram(Z, Z, cfg)
    # exact symmetry regardless of rounding in the distance computation
    K = np.triu(K) + np.triu(K, 1).T
    return K


def cho_inverse(L, symmetrize=True):
    """Inverse of ``L @ L.T`` from its lower Cholesky factor.

    With ``symmetrize=False`` only the lower triangle is filled and the
    strict upper triangle is left as in ``L`` (zero for a clean factor).
    """
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise CholeskyError(f"potri failed (info={info})")
    if not symmetrize:
        return inv
    return np.tril(inv) + np.tril(inv, -1).T


def cholesky(K, jitter=1e-8):
    """Lower Cholesky factor of ``K + jitter*I``, escalating jitter on failure.

    Returns ``(L, jitter_used)``.
    """
    n = K.shape[0]
    ladder = [j for j in (jitter,) + JITTER_LADDER if j >= jitter]
    for jit in sorted(set(ladder)):
        try:
            L = linalg.cholesky(K + jit * np.eye(n), lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L, jit
    cond = np.linalg.cond(K) if n and np.all(np.isfinite(K)) else float("nan")
    raise CholeskyError(f"Cholesky failed after jitter {JITTER_LADDER[-1]:g} (cond={cond:.3g})")
