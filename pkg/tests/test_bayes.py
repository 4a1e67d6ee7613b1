import numpy as np
import pytest

from pompad.adcore import fd_gradient
from pompad.bayes import (ChainSet, diagnostics, ess, kde_fit, kde_logpdf_grad,
                          nuts_sample, random_walk_spread, rhat)
from pompad.errors import UsageError

LOG_2PI = np.log(2 * np.pi)


class TestKdeFit:
    def test_repeated_point_fallback(self):
        p0 = np.array([1.5, -2.0])
        with pytest.warns(UserWarning):
            prior = kde_fit(np.tile(p0, (5, 1)), fallback_bandwidth=0.25)
        lp = prior.logpdf(p0)
        expected = sum(-0.5 * np.log(2 * np.pi * 0.25 ** 2) for _ in range(2))
        assert lp == pytest.approx(expected, abs=1e-12)

    def test_two_centers_symmetric_gradient(self):
        prior = kde_fit(np.array([[1.0], [-1.0]]))
        _, g = prior.logpdf_grad(np.array([0.0]))
        assert g[0] == pytest.approx(0.0, abs=1e-14)

    def test_unit_mass_1d(self):
        rng = np.random.default_rng(2)
        prior = kde_fit(rng.normal(size=(40, 1)))
        grid = np.linspace(-8, 8, 4001)
        pdf = np.exp([prior.logpdf(np.array([v])) for v in grid])
        mass = np.trapezoid(pdf, grid)
        assert mass == pytest.approx(1.0, abs=1e-4)

    def test_silverman_bandwidth_value(self):
        rng = np.random.default_rng(3)
        swarm = rng.normal(size=(100, 2)) * np.array([1.0, 3.0])
        prior = kde_fit(swarm)
        sd = swarm.std(axis=0, ddof=1)
        assert prior.bandwidths == pytest.approx(1.06 * sd * 100 ** -0.2)


class TestKdeGradient:
    def test_single_center_gaussian_score(self):
        prior = kde_fit(np.array([[0.5, -0.5], [0.5, -0.5]]),
                        fallback_bandwidth=0.3)
        v = np.array([1.0, 0.0])
        _, g = kde_logpdf_grad(prior, v)
        assert g == pytest.approx(-(v - np.array([0.5, -0.5])) / 0.3 ** 2)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        prior = kde_fit(rng.normal(size=(30, 3)))
        for _ in range(5):
            v = rng.normal(size=3)
            _, g = prior.logpdf_grad(v)
            gfd = fd_gradient(lambda w: prior.logpdf(np.asarray(w)), v, 1e-6)
            assert np.max(np.abs(g - gfd) / np.maximum(1, np.abs(gfd))) < 1e-6

    def test_far_tail_finite(self):
        prior = kde_fit(np.array([[0.0], [0.1], [-0.1]]))
        lp_near, _ = prior.logpdf_grad(np.array([0.0]))
        lp_far, g_far = prior.logpdf_grad(np.array([50.0]))
        assert np.isfinite(lp_far) and np.isfinite(g_far[0])
        assert lp_far < lp_near


class TestNuts:
    def test_standard_normal_moments(self):
        def logpost(v):
            return -0.5 * float(v @ v), -v

        chains = nuts_sample(logpost, np.array([2.0]), chains=4, iterations=500,
                             warmup=300, seed=42)
        draws = chains.draws.ravel()
        n_eff = ess(chains, 0)
        assert abs(draws.mean()) < 3.0 / np.sqrt(n_eff)
        assert abs(draws.var() - 1.0) < 0.15

    def test_correlated_gaussian(self):
        rho = 0.9
        P = np.linalg.inv(np.array([[1.0, rho], [rho, 1.0]]))

        def logpost(v):
            return -0.5 * float(v @ P @ v), -P @ v

        chains = nuts_sample(logpost, np.zeros(2), chains=4, iterations=500,
                             warmup=300, seed=7)
        x = chains.draws.reshape(-1, 2)
        assert np.corrcoef(x.T)[0, 1] == pytest.approx(rho, abs=0.05)

    def test_depth_zero_stays_put(self):
        def logpost(v):
            return -0.5 * float(v @ v), -v

        chains = nuts_sample(logpost, np.array([1.5]), chains=2, iterations=10,
                             warmup=0, seed=1, max_tree_depth=0)
        assert np.all(chains.draws == 1.5)

    def test_nonfinite_start_rejected(self):
        def logpost(v):
            return float("-inf"), v

        with pytest.raises(UsageError):
            nuts_sample(logpost, np.zeros(1), 1, 2, 1, seed=0)

    def test_context_callback_receives_chain_and_iteration(self):
        seen = set()

        def logpost(v, ctx):
            seen.add(ctx[0])
            return -0.5 * float(v @ v), -v

        nuts_sample(logpost, np.zeros(1), chains=3, iterations=4, warmup=2, seed=0)
        assert seen == {0, 1, 2}

    def test_deterministic(self):
        def logpost(v):
            return -0.5 * float(v @ v), -v

        a = nuts_sample(logpost, np.zeros(1), 2, 50, 30, seed=9).draws
        b = nuts_sample(logpost, np.zeros(1), 2, 50, 30, seed=9).draws
        assert np.array_equal(a, b)


class TestRhat:
    def test_identical_chains_unity(self):
        rng = np.random.default_rng(0)
        row = rng.normal(size=200)
        chains = np.stack([row, row])
        assert rhat(chains) == pytest.approx(1.0, abs=1e-9)

    def test_separated_chains_hand_value(self):
        a = np.array([1.0, 2.0, 1.0, 2.0])
        b = np.array([101.0, 102.0, 101.0, 102.0])
        x = np.stack([a, b])
        # split halves: four sequences of length 2, means (1.5, 1.5, 101.5,
        # 101.5), each variance 0.5 -> W=0.5, B=2*var(means)=2*3333.3333..
        W = 0.5
        B = 2 * np.var([1.5, 1.5, 101.5, 101.5], ddof=1)
        expected = np.sqrt(((2 - 1) / 2 * W + B / 2) / W)
        assert rhat(x) == pytest.approx(expected, rel=1e-12)
        assert rhat(x) > 1.1

    def test_never_below_one(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            x = rng.normal(size=(4, 50))
            assert rhat(x) >= 1.0 - 1e-12

    def test_zero_variance_sentinel(self):
        x = np.ones((2, 10))
        assert rhat(x) == float("inf")

    def test_shape_validation(self):
        with pytest.raises(UsageError):
            rhat(np.ones((1, 10)))


class TestEss:
    def test_iid_draws_near_total(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(4, 500))
        n_eff = ess(x)
        assert n_eff > 0.5 * 2000

    def test_perfectly_correlated_small(self):
        x = np.tile(np.linspace(0, 1, 100), (2, 1))
        assert ess(x) < 50


def test_diagnostics_schema():
    rng = np.random.default_rng(1)
    chains = ChainSet(rng.normal(size=(2, 100, 2)), np.array([0.8, 0.9]),
                      np.array([0.5, 0.4]), np.array([0, 1]))
    d = diagnostics(chains)
    assert set(d) == {"rhat", "ess", "divergences", "step_size"}
    assert len(d["rhat"]) == 2 and len(d["ess"]) == 2
    assert d["divergences"] == 1


def test_random_walk_spread_constant():
    # 0.02 * 0.95^40 * sqrt(600) = 0.0630 (documented cross-check)
    assert random_walk_spread(0.02, 0.95, 40, 600) == pytest.approx(0.063, abs=5e-4)
