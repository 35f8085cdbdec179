"""Latent GP on log noncentrality with a scaled noncentral chi-squared(1) likelihood.

Model for shifted scores ``l'_i``::

    l'_i ~ b * ncx2_1(lam(z_i)),   log lam ~ GP(mu, SE-ARD),   b ~ N+(1/2, psi_b^2)

The latent field is sampled jointly with the hyperparameters in the whitened
form ``log lam = mu + L v``, ``v ~ N(0, I)``, where ``L`` is the Cholesky
factor of the latent Gram matrix (no noise term).
"""
from __future__ import annotations

import math

import numpy as np
from scipy import linalg

from . import hmc, ncx2
from .data import PosteriorDraws, PriorConfig, ScoreDataset
from .gp_cube import halfnormal_logpdf_grad, invgamma_logpdf_grad, truncnormal_logpdf_grad
from .kernel import cholesky, scaled_sqdist

LPRIME_FLOOR = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)


def param_names(n, d):
    return ([f"latent[{i}]" for i in range(n)] + [f"lengthscale[{j}]" for j in range(d)]
            + ["signal_sd", "b"])


def _phi(A):
    """Lower triangle of ``A`` with the diagonal halved."""
    out = np.tril(A)
    out[np.diag_indices_from(out)] *= 0.5
    return out


def latent_factor(Z, lengthscales, jitter=1e-8):
    """Unit-signal Cholesky factor of the SE correlation matrix and its pieces.

    Returns ``(L_E, r2, jitter_used)`` with ``L_E L_E^T = E + jitter*I``.
    """
    r2 = scaled_sqdist(Z, Z, lengthscales)
    E = np.exp(-0.5 * r2.sum(axis=0))
    L, jit = cholesky(E, jitter)
    return L, r2, E, jit


def joint_log_posterior(v, lengthscales, signal_sd, b, lprime, Z,
                        prior: PriorConfig = PriorConfig(), gp_mean=0.0, jitter=1e-8):
    """Joint log posterior in whitened coordinates and its gradient.

    The latent covariance is ``signal_sd^2 (E + jitter I)``, so its Cholesky
    factor is ``signal_sd * L_E``.  Returns ``(logp, grad)`` with the gradient
    ordered as ``(v, lengthscales, signal_sd, b)``.
    """
    v = np.asarray(v, dtype=float)
    ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
    Z = np.asarray(Z, dtype=float)
    n, d = Z.shape
    x = np.maximum(np.asarray(lprime, dtype=float), LPRIME_FLOOR)

    L_E, r2, E, _ = latent_factor(Z, ls, jitter)
    Lv = L_E @ v
    h = gp_mean + signal_sd * Lv
    lam = np.exp(h)
    ll, d_lam, d_b = ncx2.logpdf_grad(x, lam, b)
    g_h = d_lam * lam

    lp = float(ll.sum()) - 0.5 * v @ v - 0.5 * n * _LOG_2PI
    grad_v = signal_sd * (L_E.T @ g_h) - v
    grad_sig = float(g_h @ Lv)
    grad_ls = np.empty(d)
    w = L_E.T @ g_h
    for j in range(d):
        dE = E * r2[j] / ls[j]
        # derivative of the Cholesky factor: dL = L Phi(L^-1 dE L^-T)
        X = linalg.solve_triangular(L_E, dE, lower=True, check_finite=False)
        A = linalg.solve_triangular(L_E, X.T, lower=True, check_finite=False)
        grad_ls[j] = signal_sd * (w @ (_phi(A) @ v))
    grad_b = float(d_b.sum())

    for j in range(d):
        p, g = invgamma_logpdf_grad(ls[j], prior.lengthscale_shape, prior.lengthscale_scale)
        lp += p
        grad_ls[j] += g
    p, g = halfnormal_logpdf_grad(signal_sd, prior.signal_sd_prior_scale)
    lp += p
    grad_sig += g
    p, g = truncnormal_logpdf_grad(b, 0.5, prior.b_prior_scale)
    lp += p
    grad_b += g
    return float(lp), np.concatenate([grad_v, grad_ls, [grad_sig, grad_b]])


class ChisqModel:
    """Fitted GP(chi^2_1) model: joint draws of whitened latents and hyperparameters."""

    def __init__(self, dataset: ScoreDataset, draws: PosteriorDraws,
                 prior: PriorConfig = PriorConfig(), jitter=1e-8):
        self.dataset = dataset
        self.draws = draws
        self.prior = prior
        self.jitter = jitter
        self.gp_mean = 0.0 if prior.gp_mean is None else float(prior.gp_mean)
        self.v = draws.columns("latent")
        if self.v.shape[1] != dataset.n:
            raise ValueError("latent draws do not match the number of observations")
        self.lengthscales = draws.columns("lengthscale")
        self.signal_sd = draws["signal_sd"]
        self.b = draws["b"]
        self._cache: dict = {}

    @property
    def M(self) -> int:
        return self.draws.M

    def _factor(self, j):
        L = self._cache.get(j)
        if L is None:
            L = latent_factor(self.dataset.Z, self.lengthscales[j], self.jitter)[0]
            self._cache[j] = L
        return L

    def log_lambda_train(self, j=None):
        """Reconstructed ``log lam`` at the training points, per draw."""
        idx = range(self.M) if j is None else [j]
        out = np.array([self.gp_mean + self.signal_sd[k] * (self._factor(k) @ self.v[k])
                        for k in idx])
        return out[0] if j is not None else out

    def lambda_moments(self, Zq, draws=None):
        """Conditional mean and variance of ``log lam`` at raw query points, per draw.

        The jitter acts as a nugget: a query point that coincides with a
        training point reproduces that point's latent value.
        """
        Zs = self.dataset.standardizer(np.atleast_2d(np.asarray(Zq, dtype=float)))
        Z = self.dataset.Z
        idx, inverse = np.unique(np.arange(self.M) if draws is None else np.asarray(draws, dtype=int),
                                 return_inverse=True)
        means, variances = [], []
        for j in idx:
            L = self._factor(j)
            r2 = scaled_sqdist(Zs, Z, self.lengthscales[j]).sum(axis=0)
            e = np.exp(-0.5 * r2) + self.jitter * (r2 == 0)
            u = linalg.solve_triangular(L, e.T, lower=True, check_finite=False)
            sig = self.signal_sd[j]
            means.append(self.gp_mean + sig * (u.T @ self.v[j]))
            var = sig**2 * (1.0 + self.jitter - np.sum(u * u, axis=0))
            variances.append(np.maximum(var, 0.0))
        return np.asarray(means)[inverse], np.asarray(variances)[inverse]

    def predict_lambda(self, Zq, rng: np.random.Generator, draws=None):
        """One draw of ``lam`` at each raw query point per posterior draw."""
        mean, var = self.lambda_moments(Zq, draws)
        return np.exp(mean + np.sqrt(var) * rng.standard_normal(mean.shape))

    def elpd_draws(self, Zq, a_tilde, rng: np.random.Generator, draws=None):
        lam = self.predict_lambda(Zq, rng, draws)
        idx = np.arange(self.M) if draws is None else np.asarray(draws)
        a_tilde = np.broadcast_to(np.asarray(a_tilde, dtype=float), lam.shape[1:])
        return a_tilde - self.b[idx][:, None] * (1.0 + lam)


def make_target(dataset: ScoreDataset, prior: PriorConfig = PriorConfig(),
                jitter=1e-8) -> hmc.TargetDensity:
    n, d = dataset.n, dataset.d
    names = param_names(n, d)
    Z = np.asarray(dataset.Z)
    lprime = np.asarray(dataset.lprime)
    mu = 0.0 if prior.gp_mean is None else float(prior.gp_mean)

    def logp_grad(theta):
        return joint_log_posterior(theta[:n], theta[n:n + d], theta[n + d], theta[n + d + 1],
                                   lprime, Z, prior, mu, jitter)

    def init(rng):
        return np.concatenate([
            rng.uniform(-0.5, 0.5, n),
            np.exp(rng.uniform(-0.5, 0.5, d)),
            np.exp(rng.uniform(-0.5, 0.5, 1)),
            0.5 * np.exp(rng.uniform(-0.3, 0.3, 1)),
        ])

    positive = np.r_[np.zeros(n, bool), np.ones(d + 2, bool)]
    return hmc.TargetDensity(names, logp_grad, positive=positive, init=init)


def fit(dataset: ScoreDataset, cfg: hmc.HmcConfig = hmc.HmcConfig(),
        prior: PriorConfig = PriorConfig()) -> ChisqModel:
    if dataset.n < 2:
        raise ValueError("fit needs at least 2 observations")
    draws = hmc.sample(make_target(dataset, prior), cfg)
    return ChisqModel(dataset, draws, prior)
