"""Gaussian GP regression on power-transformed log scores.

The transformed scores ``y = (l')**alpha`` (cube root by default) are modeled
as ``y_i ~ N(f(z_i), noise_sd^2)`` with an SE-ARD GP prior on ``f``.  The
latent field is integrated out, the kernel hyperparameters are sampled with
HMC, and ELPD draws at a query point come from one latent draw per
hyperparameter draw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special, stats

from . import hmc, transforms
from .data import PosteriorDraws, PriorConfig, ScoreDataset
from .kernel import cho_inverse, cholesky, scaled_sqdist
from .transforms import CUBE_ROOT, TransformSpec

_LOG_2PI = math.log(2.0 * math.pi)
_HALFNORM_CONST = math.log(2.0) - 0.5 * _LOG_2PI
LPRIME_FLOOR = 1e-12


def invgamma_logpdf_grad(x, shape, scale):
    lp = shape * math.log(scale) - special.gammaln(shape) - (shape + 1) * np.log(x) - scale / x
    return lp, -(shape + 1) / x + scale / x**2


def halfnormal_logpdf_grad(x, scale):
    return _HALFNORM_CONST - math.log(scale) - 0.5 * (x / scale) ** 2, -x / scale**2


def truncnormal_logpdf_grad(x, loc, scale):
    """Normal(loc, scale) truncated to the positive half line."""
    z = (x - loc) / scale
    log_norm = stats.norm.logsf(-loc / scale)
    return -0.5 * z**2 - 0.5 * _LOG_2PI - math.log(scale) - log_norm, -z / scale


def param_names(d, power=False):
    names = [f"lengthscale[{j}]" for j in range(d)] + ["signal_sd", "noise_sd"]
    return names + ["power_alpha"] if power else names


def log_marginal_posterior(theta, lprime, Z, prior: PriorConfig = PriorConfig(),
                           power=False, gp_mean=None, jitter=1e-8):
    """Log marginal posterior of the hyperparameters and its gradient.

    ``theta`` holds ``(lengthscales..., signal_sd, noise_sd[, power_alpha])``
    on the constrained scale.  The response is ``cbrt(lprime)``, or
    ``lprime**power_alpha`` in power mode (with the log-Jacobian of the
    transform so different ``alpha`` values are comparable).  ``gp_mean=None``
    centres the GP at the sample mean of the response.
    """
    theta = np.asarray(theta, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n, d = Z.shape
    ls = theta[:d]
    sig, noise = theta[d], theta[d + 1]
    D = theta.size
    grad = np.zeros(D)

    if power:
        alpha = theta[d + 2]
        lp_safe = np.maximum(np.asarray(lprime, dtype=float), LPRIME_FLOOR)
        log_lp = np.log(lp_safe)
        y = np.exp(alpha * log_lp)
        dy = y * log_lp
    else:
        y = np.cbrt(np.asarray(lprime, dtype=float))
    if gp_mean is None:
        mu = y.mean()
        dmu = dy.mean() if power else 0.0
    else:
        mu, dmu = gp_mean, 0.0
    r = y - mu

    r2 = scaled_sqdist(Z, Z, ls)
    E = np.exp(-0.5 * r2.sum(axis=0))
    C = sig**2 * E + noise**2 * np.eye(n)
    L, _ = cholesky(C, jitter)
    beta = linalg.cho_solve((L, True), r, check_finite=False)
    lp = -0.5 * r @ beta - np.log(np.diag(L)).sum() - 0.5 * n * _LOG_2PI
    # d/dtheta log N = 0.5 tr((beta beta^T - C^-1) dC/dtheta).  Only the lower
    # triangle of C^-1 is formed; off-diagonal terms of symmetric sums count twice.
    Cinv_low = cho_inverse(L, symmetrize=False)
    AE = Cinv_low * E
    bE = beta @ E
    for j in range(d):
        Er = E * r2[j]
        s_j = beta @ Er @ beta - 2.0 * np.vdot(AE, r2[j])
        grad[j] = 0.5 * sig**2 / ls[j] * s_j
    # diag(E) == 1 and diag(r2) == 0
    tr_cinv = np.trace(Cinv_low)
    grad[d] = sig * (bE @ beta - (2.0 * AE.sum() - tr_cinv))
    grad[d + 1] = noise * (beta @ beta - tr_cinv)

    for j in range(d):
        p, g = invgamma_logpdf_grad(ls[j], prior.lengthscale_shape, prior.lengthscale_scale)
        lp += p
        grad[j] += g
    p, g = halfnormal_logpdf_grad(sig, prior.signal_sd_prior_scale)
    lp += p
    grad[d] += g
    p, g = halfnormal_logpdf_grad(noise, prior.noise_sd_prior_scale)
    lp += p
    grad[d + 1] += g

    if power:
        grad[d + 2] = -beta @ (dy - dmu)
        lp += n * math.log(alpha) + (alpha - 1.0) * log_lp.sum()
        grad[d + 2] += n / alpha + log_lp.sum()
        p, g = truncnormal_logpdf_grad(alpha, prior.power_prior_mean, prior.power_prior_scale)
        lp += p
        grad[d + 2] += g
    return float(lp), grad


@dataclass
class _DrawCache:
    L: np.ndarray
    beta: np.ndarray
    mu: float


class CubeModel:
    """Fitted (or draw-loaded) GP(1/3) model for one expert.

    Holds the dataset, hyperparameter draws and lazily built per-draw
    Cholesky factors of ``G(Z, Z) + noise_sd^2 I``.
    """

    def __init__(self, dataset: ScoreDataset, draws: PosteriorDraws,
                 transform: TransformSpec = CUBE_ROOT, prior: PriorConfig = PriorConfig(),
                 jitter=1e-8):
        self.dataset = dataset
        self.draws = draws
        self.transform = transform
        self.prior = prior
        self.jitter = jitter
        self.power = transform.kind == "power"
        d = dataset.d
        self.lengthscales = draws.columns("lengthscale")
        if self.lengthscales.shape[1] != d:
            raise ValueError(f"draws have {self.lengthscales.shape[1]} lengthscales, data has d={d}")
        self.signal_sd = draws["signal_sd"]
        self.noise_sd = draws["noise_sd"]
        self.alpha = draws["power_alpha"] if self.power else np.full(draws.M, transform.alpha)
        self._cache: dict = {}

    @property
    def M(self) -> int:
        return self.draws.M

    def response(self, j):
        if self.power:
            return np.maximum(self.dataset.lprime, LPRIME_FLOOR) ** self.alpha[j]
        return self.dataset.ldblprime

    def gp_mean(self, j):
        if self.prior.gp_mean is not None:
            return float(self.prior.gp_mean)
        y = self.response(j)
        return float(y.mean()) if y.size else 0.0

    def _draw(self, j) -> _DrawCache:
        c = self._cache.get(j)
        if c is None:
            Z = self.dataset.Z
            n = Z.shape[0]
            mu = self.gp_mean(j)
            if n == 0:
                c = _DrawCache(np.zeros((0, 0)), np.zeros(0), mu)
            else:
                r2 = scaled_sqdist(Z, Z, self.lengthscales[j]).sum(axis=0)
                C = self.signal_sd[j] ** 2 * np.exp(-0.5 * r2) + self.noise_sd[j] ** 2 * np.eye(n)
                L, _ = cholesky(C, self.jitter)
                beta = linalg.cho_solve((L, True), self.response(j) - mu, check_finite=False)
                c = _DrawCache(L, beta, mu)
            self._cache[j] = c
        return c

    def predict_latent(self, Zq, draws=None):
        """Per-draw predictive mean and variance of the latent ``f`` at raw query points.

        Returns two arrays of shape ``(n_draws, n_query)``.
        """
        Zs = self.dataset.standardizer(np.atleast_2d(np.asarray(Zq, dtype=float)))
        # repeated draw indices share one conditional
        idx, inverse = np.unique(np.arange(self.M) if draws is None else np.asarray(draws, dtype=int),
                                 return_inverse=True)
        means, variances = [], []
        Z = self.dataset.Z
        for j in idx:
            c = self._draw(j)
            prior_var = self.signal_sd[j] ** 2
            if Z.shape[0] == 0:
                means.append(np.full(Zs.shape[0], c.mu))
                variances.append(np.full(Zs.shape[0], prior_var))
                continue
            Ks = prior_var * np.exp(-0.5 * scaled_sqdist(Zs, Z, self.lengthscales[j]).sum(axis=0))
            means.append(c.mu + Ks @ c.beta)
            v = linalg.solve_triangular(c.L, Ks.T, lower=True, check_finite=False)
            var = prior_var - np.sum(v * v, axis=0)
            variances.append(np.where(var < 0, 0.0, var))
        return np.asarray(means)[inverse], np.asarray(variances)[inverse]

    def elpd_draws(self, Zq, a_tilde, rng: np.random.Generator, draws=None):
        """Posterior ELPD draws at raw query points, shape ``(n_draws, n_query)``.

        ``a_tilde`` is the expert's offset at each query point (scalar or one
        per point).
        """
        mean, var = self.predict_latent(Zq, draws)
        a_tilde = np.broadcast_to(np.asarray(a_tilde, dtype=float), mean.shape[1:])
        f = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
        idx = np.arange(self.M) if draws is None else np.asarray(draws)
        s2 = (self.noise_sd[idx] ** 2)[:, None]
        if not self.power:
            return a_tilde - transforms.third_moment(f, s2)
        out = np.empty_like(f)
        for r, j in enumerate(idx):
            for q in range(f.shape[1]):
                out[r, q] = transforms.elpd_from_latent_power(
                    a_tilde[q], f[r, q], s2[r, 0], self.alpha[j])
        return out

    def log_score_density(self, Zq, a_tilde, log_score, draws=None):
        """Posterior predictive log density of observed raw log scores at query points."""
        mean, var = self.predict_latent(Zq, draws)
        idx = np.arange(self.M) if draws is None else np.asarray(draws)
        lprime = np.maximum(np.asarray(a_tilde, dtype=float) - np.asarray(log_score, dtype=float),
                            LPRIME_FLOOR)
        lprime = np.broadcast_to(lprime, mean.shape[1:])
        alpha = self.alpha[idx][:, None]
        y = lprime[None, :] ** alpha
        s2 = var + (self.noise_sd[idx] ** 2)[:, None]
        logp = (-0.5 * (y - mean) ** 2 / s2 - 0.5 * np.log(2 * np.pi * s2)
                + np.log(alpha) + (alpha - 1.0) * np.log(lprime)[None, :])
        return special.logsumexp(logp, axis=0) - math.log(len(idx))


def make_target(dataset: ScoreDataset, prior: PriorConfig = PriorConfig(),
                transform: TransformSpec = CUBE_ROOT, jitter=1e-8) -> hmc.TargetDensity:
    power = transform.kind == "power"
    names = param_names(dataset.d, power)
    Z = np.asarray(dataset.Z)
    lprime = np.asarray(dataset.lprime)
    y_sd = float(np.std(np.cbrt(lprime))) or 1.0

    def logp_grad(theta):
        return log_marginal_posterior(theta, lprime, Z, prior, power, prior.gp_mean, jitter)

    def init(rng):
        base = [1.0] * dataset.d + [y_sd, y_sd] + ([prior.power_prior_mean] if power else [])
        return np.asarray(base) * np.exp(rng.uniform(-0.5, 0.5, len(base)))

    return hmc.TargetDensity(names, logp_grad, positive=np.ones(len(names), bool), init=init)


def fit(dataset: ScoreDataset, cfg: hmc.HmcConfig = hmc.HmcConfig(),
        prior: PriorConfig = PriorConfig(), transform: TransformSpec = CUBE_ROOT) -> CubeModel:
    if dataset.n < 2:
        raise ValueError("fit needs at least 2 observations")
    draws = hmc.sample(make_target(dataset, prior, transform), cfg)
    return CubeModel(dataset, draws, transform, prior)
