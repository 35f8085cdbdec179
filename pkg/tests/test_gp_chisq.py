import math

import numpy as np
import pytest
from scipy import stats

import synth
from elpdgp import gp_chisq, gp_cube, ncx2, simlab
from elpdgp.data import PosteriorDraws, PriorConfig
from elpdgp.hmc import HmcConfig

PRIOR = PriorConfig()


def log_prior(ls, sig, b, prior=PRIOR):
    lp = sum(stats.invgamma.logpdf(l, prior.lengthscale_shape, scale=prior.lengthscale_scale) for l in ls)
    lp += stats.halfnorm.logpdf(sig, scale=prior.signal_sd_prior_scale)
    lp += stats.truncnorm.logpdf(b, -0.5 / prior.b_prior_scale, np.inf, loc=0.5, scale=prior.b_prior_scale)
    return lp


def corr(Za, Zb, ls):
    D = (Za[:, None, :] - Zb[None, :, :]) / ls
    return np.exp(-0.5 * (D**2).sum(-1))


def model_with(ds, v, ls, sig, b, jitter=1e-8, prior=PRIOR):
    v = np.atleast_2d(v)
    M = v.shape[0]
    ls = np.broadcast_to(np.atleast_2d(ls), (M, ds.d))
    values = np.hstack([v, ls, np.full((M, 1), sig), np.full((M, 1), b)])
    draws = PosteriorDraws(tuple(gp_chisq.param_names(ds.n, ds.d)), values, np.zeros(M),
                           np.zeros(M, int))
    return gp_chisq.ChisqModel(ds, draws, prior, jitter=jitter)


class TestJointLogPosterior:
    def test_single_point(self):
        v, ls, sig, b, x = 0.3, 0.8, 1.1, 0.6, 2.0
        lp, _ = gp_chisq.joint_log_posterior([v], [ls], sig, b, [x], np.zeros((1, 1)), jitter=0.0)
        lam = math.exp(sig * v)
        expect = (stats.ncx2.logpdf(x / b, 1, lam) - math.log(b) + stats.norm.logpdf(v)
                  + log_prior([ls], sig, b))
        assert lp == pytest.approx(expect, abs=1e-10)

    @pytest.mark.parametrize("d", [1, 2])
    def test_gradient(self, d):
        t = gp_chisq.make_target(synth.random_lprime(10, d=d, seed=20))
        rng = np.random.default_rng(21)
        errs = [t.gradient_error(t.initial_point(rng)) for _ in range(5)]
        assert max(errs) <= 1e-5

    def test_gradient_wide_points(self):
        # lengthscales and latents away from the initialisation box
        t = gp_chisq.make_target(synth.random_lprime(10, d=2, seed=22))
        rng = np.random.default_rng(23)
        for _ in range(5):
            u = np.r_[rng.normal(size=10), rng.normal(0, 1, 4)]
            assert t.gradient_error(u) <= 1e-5

    def test_zero_latent_is_prior_mean(self):
        ds = synth.random_lprime(6, seed=24)
        m = model_with(ds, np.zeros(6), [0.9], 1.3, 0.5, prior=PriorConfig(gp_mean=0.7))
        np.testing.assert_allclose(np.exp(m.log_lambda_train(0)), math.exp(0.7), rtol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_whitened_matches_direct(self, seed):
        rng = np.random.default_rng(seed)
        n, jit = 5, 1e-6
        Z = rng.normal(size=(n, 2))
        x = rng.exponential(size=n)
        v, ls, sig, b = rng.normal(size=n), rng.uniform(0.5, 2, 2), rng.uniform(0.5, 2), rng.uniform(0.2, 1)
        lp, _ = gp_chisq.joint_log_posterior(v, ls, sig, b, x, Z, jitter=jit)
        C = sig**2 * (corr(Z, Z, ls) + jit * np.eye(n))
        L = np.linalg.cholesky(C)
        h = L @ v
        direct = (stats.multivariate_normal.logpdf(h, np.zeros(n), C)
                  + np.sum(stats.ncx2.logpdf(x / b, 1, np.exp(h)) - math.log(b)))
        jac = np.sum(np.log(np.diag(L)))
        assert lp == pytest.approx(direct + jac + log_prior(ls, sig, b), abs=1e-8)

    def test_zero_scores_nudged(self):
        lp, g = gp_chisq.joint_log_posterior(np.zeros(2), [1.0], 1.0, 0.5, [0.0, 1.0],
                                             np.array([[0.0], [1.0]]))
        assert np.isfinite(lp) and np.all(np.isfinite(g))


class TestPrediction:
    def test_training_point_interpolation(self):
        ds = synth.random_lprime(6, seed=30)
        v = np.random.default_rng(31).normal(size=(3, 6))
        m = model_with(ds, v, [0.7], 1.2, 0.5)
        mean, var = m.lambda_moments(ds.Z_raw)
        np.testing.assert_allclose(mean, m.log_lambda_train(), atol=1e-10)
        np.testing.assert_allclose(var, 0.0, atol=1e-10)
        lam = m.predict_lambda(ds.Z_raw, np.random.default_rng(0))
        np.testing.assert_allclose(np.log(lam), m.log_lambda_train(), atol=1e-5)

    def test_far_field(self):
        ds = synth.random_lprime(6, seed=32)
        m = model_with(ds, np.random.default_rng(33).normal(size=6), [0.5], 1.4, 0.5,
                       prior=PriorConfig(gp_mean=0.2))
        mean, var = m.lambda_moments(np.array([[1e3]]))
        assert mean[0, 0] == pytest.approx(0.2, abs=1e-12)
        assert var[0, 0] == pytest.approx(1.96, rel=1e-7)

    @pytest.mark.parametrize("trial", range(20))
    def test_dense_oracle(self, trial):
        rng = np.random.default_rng(200 + trial)
        ds = synth.from_lprime(rng.exponential(size=3), rng.normal(size=(3, 2)))
        v, ls, sig = rng.normal(size=3), rng.uniform(0.5, 2, 2), rng.uniform(0.5, 2)
        jit = 1e-8
        m = model_with(ds, v, ls, sig, 0.5, jitter=jit)
        zq = rng.normal(size=(4, 2))
        mean, var = m.lambda_moments(zq)
        Z, Zs = ds.Z, ds.standardizer(zq)
        K = sig**2 * (corr(Z, Z, ls) + jit * np.eye(3))
        k = sig**2 * corr(Zs, Z, ls)
        h = m.log_lambda_train(0)
        Ki = np.linalg.inv(K)
        np.testing.assert_allclose(mean[0], k @ Ki @ h, atol=1e-10)
        np.testing.assert_allclose(var[0], sig**2 * (1 + jit) - np.einsum("ij,jk,ik->i", k, Ki, k),
                                   atol=1e-10)

    def test_dimension_mismatch(self):
        m = model_with(synth.random_lprime(4, seed=34), np.zeros(4), [1.0], 1.0, 0.5)
        with pytest.raises(ValueError):
            m.lambda_moments(np.zeros((2, 3)))


class TestElpd:
    def test_perfect_mean_expert(self):
        # lam = 0 in the limit of a very negative latent mean
        ds = synth.random_lprime(4, seed=40)
        m = model_with(ds, np.zeros(4), [1.0], 1e-6, 0.5, prior=PriorConfig(gp_mean=-800.0))
        eta = m.elpd_draws(np.array([[0.0]]), -1.0, np.random.default_rng(0))
        assert eta[0, 0] == -1.5

    def test_formula(self):
        ds = synth.random_lprime(5, seed=41)
        v = np.random.default_rng(42).normal(size=(4, 5))
        m = model_with(ds, v, [0.8], 0.9, 0.3)
        zq = np.array([[0.1], [2.0]])
        lam = m.predict_lambda(zq, np.random.default_rng(7))
        eta = m.elpd_draws(zq, np.array([-1.0, -2.0]), np.random.default_rng(7))
        np.testing.assert_allclose(eta, np.array([-1.0, -2.0]) - 0.3 * (1 + lam), rtol=1e-14)

    @pytest.mark.parametrize("x2", [0.0, 1.0, 2.0, -1.5])
    def test_simulation_identity(self, x2):
        # Gaussian expert N(x1, 2) against DGP N(x1 + x2, 1): b = 1/4, lam = x2^2
        assert simlab.A_SIM - 0.25 * (1 + x2**2) == pytest.approx(simlab.true_elpd(x2), abs=1e-15)

    def test_mean_identity(self):
        p = ncx2.ScaledNcx2Params(2.5, 0.4)
        x = ncx2.sample(p, np.random.default_rng(43), 200_000)
        assert abs(x.mean() - 0.4 * 3.5) < 4 * x.std() / math.sqrt(x.size)


class TestFit:
    def test_minimal(self):
        ds = synth.from_lprime([0.5, 1.5], [[0.0], [1.0]])
        m = gp_chisq.fit(ds, HmcConfig(warmup=100, draws=100, chains=2, seed=0))
        assert m.draws.values.shape[1] == 2 + 1 + 2
        assert np.all(m.b > 0)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            gp_chisq.fit(synth.from_lprime([0.5], [[0.0]]), HmcConfig())

    def test_deterministic(self):
        ds = synth.random_lprime(15, seed=44)
        cfg = HmcConfig(warmup=50, draws=30, chains=2, seed=6)
        np.testing.assert_array_equal(gp_chisq.fit(ds, cfg).draws.values, gp_chisq.fit(ds, cfg).draws.values)

    def test_agrees_with_cube_model(self):
        ds, _ = simlab.simulate(simlab.SimScenario(n=150), 1)
        grid = np.linspace(-2, 2, 41)[:, None]
        med, iqr = [], []
        for fit in (gp_cube.fit, gp_chisq.fit):
            m = fit(ds, HmcConfig(warmup=200, draws=250, chains=2, seed=8))
            eta = m.elpd_draws(grid, simlab.A_SIM, np.random.default_rng(0))
            q1, q2, q3 = np.quantile(eta, [0.25, 0.5, 0.75], axis=0)
            med.append(q2)
            iqr.append(q3 - q1)
        assert np.mean(np.abs(med[0] - med[1])) < np.mean(iqr)

    @pytest.mark.slow
    def test_parameter_recovery(self):
        hits = 0
        for r in range(100):
            m = gp_chisq.fit(synth.constant_ncx2_data(r), HmcConfig(warmup=200, draws=250, chains=2, seed=r))
            lo, hi = np.quantile(m.b, [0.05, 0.95])
            hits += (2.5 <= np.exp(m.log_lambda_train()).mean() <= 6.0) and lo <= 0.5 <= hi
        assert hits >= 70
