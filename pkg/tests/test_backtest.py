import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from elpdgp import backtest, pooling, simlab
from elpdgp.backtest import BacktestConfig
from elpdgp.data import ScoreDataset
from elpdgp.hmc import HmcConfig

TINY = HmcConfig(warmup=60, draws=40, chains=2)


def two_experts(n=80, seed=0):
    """The misspecified simulation expert and the correctly specified one."""
    ds, cov = simlab.simulate(simlab.SimScenario(n=n), seed)
    good = ScoreDataset("good", ds.ids, stats.norm.logpdf(cov.y, cov.x1 + cov.x2, 1.0),
                        np.ones(n), cov.x2[:, None], ["x2"])
    bad = ScoreDataset("bad", ds.ids, ds.log_score, ds.pred_sd, ds.Z_raw, ["x2"])
    return [bad, good]


class TestAlign:
    def test_intersection_in_first_order(self):
        a = ScoreDataset("a", [3, 1, 2, 5], -np.arange(1.0, 5.0), np.ones(4), np.arange(4.0))
        b = ScoreDataset("b", [2, 3, 4, 1], -np.arange(1.0, 5.0), np.ones(4), np.arange(4.0))
        a2, b2 = backtest.align([a, b])
        assert a2.ids.tolist() == [3, 1, 2] and b2.ids.tolist() == [3, 1, 2]
        np.testing.assert_array_equal(b2.log_score, [-2.0, -4.0, -1.0])


class TestBenchmarksOnly:
    def test_tables(self):
        res = backtest.run_backtest(two_experts(), BacktestConfig(start=10))
        assert len(res.table1) == 2 * len(simlab.BENCHMARKS)
        methods = [r["method"] for r in res.table2]
        assert methods == ["bad", "good", "equal", "optimal"]
        assert len(res.steps) == 70
        assert res.fits == []

    def test_equal_pool_values(self):
        exps = two_experts()
        res = backtest.run_backtest(exps, BacktestConfig(start=10))
        L = np.column_stack([e.log_score for e in exps])
        expect = logsumexp(L[10:], axis=1) - math.log(2)
        got = [s["pool:equal"] for s in res.steps]
        np.testing.assert_allclose(got, expect, rtol=1e-12)
        total = {r["method"]: r["sum_log_score"] for r in res.table2}
        assert total["equal"] == pytest.approx(expect.sum(), rel=1e-12)
        assert total["good"] == pytest.approx(L[10:, 1].sum(), rel=1e-12)

    def test_optimal_pool_uses_past_only(self):
        exps = two_experts()
        res = backtest.run_backtest(exps, BacktestConfig(start=10))
        L = np.column_stack([e.log_score for e in exps])
        t = 40
        w = pooling.optimal_pool_weights(L[:t])
        row = res.steps[t - 10]
        assert row["step"] == t
        assert row["pool:optimal"] == pytest.approx(pooling.pooled_log_density(L[t], w), rel=1e-12)

    def test_cube_scale_beats_raw_scale(self):
        exps = two_experts(n=1000, seed=3)
        res = backtest.run_backtest(exps[:1], BacktestConfig(start=10))
        med = {r["method"]: r["median"] for r in res.table1}
        assert min(med["ldblprime_rw"], med["ldblprime_mean"]) > max(med["lprime_rw"], med["lprime_mean"])

    def test_too_short(self):
        with pytest.raises(ValueError):
            backtest.run_backtest(two_experts(n=12), BacktestConfig(start=12))

    def test_duplicate_names(self):
        e = two_experts()[0]
        with pytest.raises(ValueError, match="unique"):
            backtest.run_backtest([e, e])


@pytest.fixture(scope="module")
def result():
    cfg = BacktestConfig(start=10, gp=True, refit_every=10, hmc=TINY, max_draws=50, seed=1)
    return backtest.run_backtest(two_experts(n=30), cfg)


class TestWithGp:
    def test_pools_finite(self, result):
        for row in result.steps:
            for k in ("natural", "selection", "softmax_fixed_c", "dynamic"):
                assert np.isfinite(row[f"pool:{k}"])
            assert row["p_bad"] + row["p_good"] == pytest.approx(1.0, abs=1e-12)
            assert row["c_dynamic"] in pooling.C_GRID
            assert np.isfinite(row["good:gp_cube"])

    def test_refits(self, result):
        assert sorted({f["step"] for f in result.fits}) == [10, 20]
        assert len(result.fits) == 4

    def test_first_dynamic_c_is_zero(self, result):
        assert result.steps[0]["c_dynamic"] == 0.0

    def test_gp_row_in_table1(self, result):
        assert {r["method"] for r in result.table1 if r["expert"] == "good"} >= {"gp_cube"}

    def test_deterministic(self, result):
        cfg = BacktestConfig(start=10, gp=True, refit_every=10, hmc=TINY, max_draws=50, seed=1)
        again = backtest.run_backtest(two_experts(n=30), cfg)
        assert again.steps == result.steps
