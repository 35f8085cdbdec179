import math

import numpy as np
import pytest
from scipy import stats

import synth
from elpdgp import gp_cube, simlab
from elpdgp.data import PosteriorDraws, PriorConfig, ScoreDataset
from elpdgp.hmc import HmcConfig
from elpdgp.transforms import TransformSpec

PRIOR = PriorConfig()


def log_prior(ls, sig, noise, prior=PRIOR):
    lp = sum(stats.invgamma.logpdf(l, prior.lengthscale_shape, scale=prior.lengthscale_scale) for l in ls)
    lp += stats.halfnorm.logpdf(sig, scale=prior.signal_sd_prior_scale)
    lp += stats.halfnorm.logpdf(noise, scale=prior.noise_sd_prior_scale)
    return lp


def dense_cov(Z, ls, sig, noise):
    D = (Z[:, None, :] - Z[None, :, :]) / ls
    return sig**2 * np.exp(-0.5 * (D**2).sum(-1)) + noise**2 * np.eye(len(Z))


def model_with(ds, ls, sig, noise, transform=TransformSpec(), alpha=None, prior=PRIOR):
    ls = np.atleast_2d(ls)
    M = ls.shape[0]
    cols = [ls, np.full((M, 1), sig), np.full((M, 1), noise)]
    names = [f"lengthscale[{j}]" for j in range(ls.shape[1])] + ["signal_sd", "noise_sd"]
    if alpha is not None:
        cols.append(np.full((M, 1), alpha))
        names.append("power_alpha")
    draws = PosteriorDraws(tuple(names), np.hstack(cols), np.zeros(M), np.zeros(M, int))
    return gp_cube.CubeModel(ds, draws, transform, prior, jitter=0.0)


class TestLogMarginal:
    def test_single_point(self):
        theta = np.array([0.8, 1.1, 0.4])
        lp, _ = gp_cube.log_marginal_posterior(theta, [8.0], np.zeros((1, 1)), gp_mean=0.3, jitter=0.0)
        expect = stats.norm.logpdf(2.0, 0.3, math.sqrt(1.1**2 + 0.4**2)) + log_prior([0.8], 1.1, 0.4)
        assert lp == pytest.approx(expect, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        Z = rng.normal(size=(3, 2))
        lprime = rng.exponential(size=3)
        ls, sig, noise = rng.uniform(0.5, 2, 2), rng.uniform(0.5, 2), rng.uniform(0.1, 1)
        theta = np.r_[ls, sig, noise]
        lp, _ = gp_cube.log_marginal_posterior(theta, lprime, Z, jitter=0.0)
        y = np.cbrt(lprime)
        r = y - y.mean()
        C = dense_cov(Z, ls, sig, noise)
        expect = (-0.5 * r @ np.linalg.inv(C) @ r - 0.5 * math.log(np.linalg.det(C))
                  - 1.5 * math.log(2 * math.pi) + log_prior(ls, sig, noise))
        assert lp == pytest.approx(expect, abs=1e-10)

    @pytest.mark.parametrize("power", [False, True])
    def test_gradient(self, power):
        ds = synth.random_lprime(10, d=2, seed=1)
        t = gp_cube.make_target(ds, transform=TransformSpec("power") if power else TransformSpec())
        rng = np.random.default_rng(2)
        errs = [t.gradient_error(t.initial_point(rng)) for _ in range(5)]
        assert max(errs) <= 1e-5

    def test_power_at_one_third_matches_cube_plus_jacobian(self):
        ds = synth.random_lprime(8, seed=3)
        theta = np.array([1.2, 0.7, 0.3])
        lp_cube, _ = gp_cube.log_marginal_posterior(theta, ds.lprime, ds.Z)
        lp_pow, _ = gp_cube.log_marginal_posterior(np.r_[theta, 1 / 3], ds.lprime, ds.Z, power=True)
        jac = np.sum(np.log(1 / 3) - (2 / 3) * np.log(ds.lprime))
        prior = stats.truncnorm.logpdf(1 / 3, (0 - 1 / 3) / 0.1, np.inf, loc=1 / 3, scale=0.1)
        assert lp_pow == pytest.approx(lp_cube + jac + prior, abs=1e-9)


class TestPredictLatent:
    @pytest.mark.parametrize("trial", range(20))
    def test_dense_oracle(self, trial):
        rng = np.random.default_rng(100 + trial)
        ds = synth.from_lprime(rng.exponential(size=3), rng.normal(size=(3, 2)))
        ls, sig, noise = rng.uniform(0.5, 2, 2), rng.uniform(0.5, 2), rng.uniform(0.1, 1)
        m = model_with(ds, ls, sig, noise)
        zq = rng.normal(size=(4, 2))
        mean, var = m.predict_latent(zq)
        Z, Zs = ds.Z, ds.standardizer(zq)
        C = dense_cov(Z, ls, sig, noise)
        Ks = sig**2 * np.exp(-0.5 * (((Zs[:, None, :] - Z[None]) / ls) ** 2).sum(-1))
        y = ds.ldblprime
        Ci = np.linalg.inv(C)
        np.testing.assert_allclose(mean[0], y.mean() + Ks @ Ci @ (y - y.mean()), atol=1e-10)
        np.testing.assert_allclose(var[0], sig**2 - np.einsum("ij,jk,ik->i", Ks, Ci, Ks), atol=1e-10)

    def test_no_data_gives_prior(self):
        ds = ScoreDataset("e", [], [], [], np.zeros((0, 1)))
        m = model_with(ds, [1.0], 1.3, 0.2, prior=PriorConfig(gp_mean=0.7))
        mean, var = m.predict_latent(np.array([[0.0], [5.0]]))
        np.testing.assert_allclose(mean, 0.7)
        np.testing.assert_allclose(var, 1.69)

    def test_interpolation_limit(self):
        ds = synth.random_lprime(6, seed=4)
        m = model_with(ds, [0.5], 1.0, 1e-6)
        mean, _ = m.predict_latent(ds.Z_raw)
        np.testing.assert_allclose(mean[0], ds.ldblprime, atol=1e-6)

    def test_far_field(self):
        ds = synth.random_lprime(6, seed=5)
        m = model_with(ds, [0.5], 1.4, 0.3)
        mean, var = m.predict_latent(np.array([[1e3]]))
        assert mean[0, 0] == pytest.approx(ds.ldblprime.mean(), abs=1e-12)
        assert var[0, 0] == pytest.approx(1.96, abs=1e-12)

    def test_variance_bounded_by_prior(self):
        ds = synth.random_lprime(30, d=2, seed=6)
        m = model_with(ds, [0.7, 1.5], 1.2, 0.2)
        _, var = m.predict_latent(np.random.default_rng(0).normal(size=(200, 2)) * 2)
        assert np.all(var >= 0) and np.all(var <= 1.44 + 1e-12)

    def test_dimension_mismatch(self):
        m = model_with(synth.random_lprime(5, seed=7), [1.0], 1.0, 0.3)
        with pytest.raises(ValueError):
            m.predict_latent(np.zeros((2, 3)))


class TestElpdDraws:
    def test_point_mass(self):
        ds = synth.random_lprime(5, seed=8)
        m = model_with(ds, [0.5], 1.0, 0.0)
        # query at training points with no noise: latent variance collapses
        eta = m.elpd_draws(ds.Z_raw, -1.2, np.random.default_rng(0))
        np.testing.assert_allclose(eta[0], -1.2 - ds.ldblprime**3, atol=1e-6)

    def test_monte_carlo_third_moment(self):
        ds = synth.random_lprime(12, seed=9)
        m = model_with(ds, [0.8], 0.9, 0.4)
        idx = np.zeros(100_000, int)
        zq = np.array([[0.3]])
        eta = m.elpd_draws(zq, -1.0, np.random.default_rng(1), draws=idx)[:, 0]
        mu, v = (x[0, 0] for x in m.predict_latent(zq, draws=[0]))
        closed = -1.0 - (mu**3 + 3 * mu * v) - 3 * mu * 0.4**2
        assert abs(eta.mean() - closed) < 4 * eta.std() / math.sqrt(eta.size)

    def test_per_point_offset(self):
        m = model_with(synth.random_lprime(5, seed=10), [1.0], 1.0, 0.3)
        zq = np.zeros((2, 1))
        eta = m.elpd_draws(zq, np.array([0.0, -1.0]), np.random.default_rng(2), draws=[0, 0])
        e0 = m.elpd_draws(zq, 0.0, np.random.default_rng(2), draws=[0, 0])
        np.testing.assert_allclose(eta[:, 1], e0[:, 1] - 1.0, rtol=1e-12)

    def test_power_mode_at_one_third(self):
        ds = synth.random_lprime(8, seed=11)
        m3 = model_with(ds, [1.0], 0.5, 0.2)
        mp = model_with(ds, [1.0], 0.5, 0.2, TransformSpec("power"), alpha=1 / 3)
        zq = np.array([[0.1]])
        a = m3.elpd_draws(zq, -1.0, np.random.default_rng(3))
        b = mp.elpd_draws(zq, -1.0, np.random.default_rng(3))
        # the latent mean is well above zero so the truncated tail is negligible
        np.testing.assert_allclose(b, a, rtol=1e-4)

    def test_log_score_density_normalized(self):
        from scipy import integrate
        m = model_with(synth.random_lprime(8, seed=12), [1.0], 0.5, 0.3)
        zq = np.array([[0.0]])
        f = lambda l: math.exp(m.log_score_density(zq, 0.0, l)[0])
        val = integrate.quad(f, -60, 0, limit=200, points=[-1, -0.1])[0]
        # the Gaussian on the cube-root scale leaks mass below zero, which no score can reach
        mu, v = (x[0, 0] for x in m.predict_latent(zq))
        assert val == pytest.approx(stats.norm.sf(0.0, mu, math.sqrt(v + 0.3**2)), abs=1e-6)


class TestFit:
    def test_minimal(self):
        ds = synth.from_lprime([0.5, 1.5], [[0.0], [1.0]])
        m = gp_cube.fit(ds, HmcConfig(warmup=100, draws=100, chains=2, seed=0))
        assert m.draws.divergence_fraction() < 0.5
        assert m.draws.names == ("lengthscale[0]", "signal_sd", "noise_sd")

    def test_needs_two(self):
        with pytest.raises(ValueError):
            gp_cube.fit(synth.from_lprime([0.5], [[0.0]]), HmcConfig())

    def test_deterministic(self):
        ds = synth.random_lprime(20, seed=13)
        cfg = HmcConfig(warmup=60, draws=40, chains=2, seed=5)
        a = gp_cube.fit(ds, cfg).draws.values
        b = gp_cube.fit(ds, cfg).draws.values
        np.testing.assert_array_equal(a, b)

    def test_power_mode(self):
        ds = synth.random_lprime(30, seed=14)
        m = gp_cube.fit(ds, HmcConfig(warmup=100, draws=100, chains=2, seed=1), transform=TransformSpec("power"))
        assert "power_alpha" in m.draws.names
        assert np.all(m.alpha > 0)

    def test_simulation_center(self):
        ds, _ = simlab.simulate(simlab.SimScenario(n=150), 0)
        m = gp_cube.fit(ds, HmcConfig(warmup=200, draws=250, chains=2, seed=3))
        eta = m.elpd_draws(np.array([[0.0]]), simlab.A_SIM, np.random.default_rng(0))[:, 0]
        lo, hi = np.quantile(eta, [0.025, 0.975])
        assert lo <= -1.515512 <= hi
        assert lo <= np.median(eta) <= hi

    @pytest.mark.slow
    def test_noise_calibration(self):
        hits = 0
        for r in range(100):
            m = gp_cube.fit(synth.gp_cube_data(r), HmcConfig(warmup=200, draws=250, chains=2, seed=r))
            lo, hi = np.quantile(m.noise_sd, [0.05, 0.95])
            hits += lo <= 0.3 <= hi
        assert hits >= 70
