import numpy as np
import pytest

from pompad import adcore
from pompad.errors import UsageError
from pompad.mif2 import (CoolingSchedule, if2_iteration, load_swarm, run_if2,
                         save_swarm, swarm_from_box, swarm_from_theta)
from pompad.mop import MopConfig, run_bootstrap
from pompad.oracle import kalman_loglik, kalman_mle
from pompad.pomp import Dataset, LinearGaussianModel, Param, ParamSet, PompModel

THETA = {"a": 0.8, "sigma": 1.0, "tau": 1.0}


def lgssm_fixture(n=30, seed=5):
    model = LinearGaussianModel()
    return model, model.simulate(THETA, n, seed=seed)


class TestCoolingSchedule:
    def test_paper_constants(self):
        # 0.02 * 0.95^40 = 0.0025702...
        sched = CoolingSchedule(0.02, 0.95)
        assert sched.sd(40) == pytest.approx(0.0025702, abs=1e-6)

    def test_strict_monotonicity(self):
        sched = CoolingSchedule(0.05, 0.9)
        sds = [float(sched.sd(m)) for m in range(10)]
        assert all(b < a for a, b in zip(sds, sds[1:]))

    def test_per_parameter_scales(self):
        sched = CoolingSchedule(np.array([0.01, 0.04]), 0.95)
        assert sched.sd(2).tolist() == pytest.approx([0.01 * 0.95 ** 2,
                                                      0.04 * 0.95 ** 2])

    def test_validation(self):
        with pytest.raises(UsageError):
            CoolingSchedule(0.02, 1.5)
        with pytest.raises(UsageError):
            CoolingSchedule(-0.1, 0.95)


class TestIf2Iteration:
    def test_zero_sd_equals_bootstrap_bitwise(self):
        """No perturbation and an identical swarm is exactly the bootstrap
        filter under the same seed discipline."""
        model, data = lgssm_fixture()
        swarm = swarm_from_theta(model.params, THETA, 128)
        _, ll = if2_iteration(model, data, swarm, np.zeros(3), seed=41)
        boot = run_bootstrap(model, data, THETA, MopConfig(J=128, seed=41))
        assert ll == boot.loglik

    def test_zero_sd_keeps_swarm(self):
        model, data = lgssm_fixture(n=5)
        swarm = swarm_from_theta(model.params, THETA, 16)
        out, _ = if2_iteration(model, data, swarm, np.zeros(3), seed=1)
        assert np.array_equal(out, swarm)

    def test_swarm_width_validated(self):
        model, data = lgssm_fixture(n=3)
        with pytest.raises(UsageError):
            if2_iteration(model, data, np.zeros((8, 2)), np.zeros(2), seed=0)

    def test_quadratic_toy_contracts(self):
        """State-free quadratic log-density: the swarm mean must move
        toward the maximizer, monotonically in the median over seeds."""

        class QuadraticToy(PompModel):
            name = "quad"
            state_names = ("x",)

            def __init__(self):
                self.params = ParamSet([Param("th")])
                self.t0 = 0.0

            def rinit(self, theta, J, noise):
                return {"x": adcore.constant(np.zeros(J))}

            def rprocess_step(self, state, t0, t1, theta, noise):
                return state

            def dmeasure_log(self, y, state, theta):
                d = theta["th"] - 1.5
                return -2.0 * d * d + 0.0 * state["x"]

        model = QuadraticToy()
        data = Dataset(np.arange(1.0, 6.0), np.zeros(5))
        distances = np.zeros((20, 11))
        for s in range(20):
            swarm = np.full((64, 1), -1.0)
            distances[s, 0] = abs(swarm.mean() - 1.5)
            for m in range(10):
                swarm, _ = if2_iteration(model, data, swarm, np.array([0.08]),
                                         seed=100 * s + m)
                distances[s, m + 1] = abs(swarm.mean() - 1.5)
        med = np.median(distances, axis=0)
        assert med[-1] < med[0] * 0.5
        assert np.all(np.diff(med) < 0.05)  # monotone up to noise


class TestRunIf2:
    def test_zero_iterations_identity(self):
        model, data = lgssm_fixture(n=4)
        swarm0 = swarm_from_theta(model.params, THETA, 8)
        res = run_if2(model, data, swarm0, CoolingSchedule(), 0, seed=3)
        assert np.array_equal(res.swarm, swarm0)
        assert res.loglik_trace.size == 0

    def test_identical_rows_mean(self):
        model, data = lgssm_fixture(n=4)
        swarm0 = swarm_from_theta(model.params, THETA, 8)
        res = run_if2(model, data, swarm0, CoolingSchedule(), 0, seed=3)
        assert res.theta_natural == pytest.approx(
            {**THETA, "mu0": 0.0, "s0": 1.0}, rel=1e-12)

    def test_reproducible(self):
        model, data = lgssm_fixture(n=10)
        swarm0 = swarm_from_theta(model.params, {"a": 0.5, "sigma": 1.5, "tau": 0.8}, 64)
        r1 = run_if2(model, data, swarm0, CoolingSchedule(0.05, 0.95), 5, seed=7)
        r2 = run_if2(model, data, swarm0, CoolingSchedule(0.05, 0.95), 5, seed=7)
        assert np.array_equal(r1.swarm, r2.swarm)
        assert np.array_equal(r1.loglik_trace, r2.loglik_trace)

    def test_global_search_reaches_mle_neighborhood(self):
        """Wide-box starts land within a couple of likelihood units of the
        exact maximum after a full cooled run."""
        model, data = lgssm_fixture(n=50, seed=5)
        v_mle, ll_mle = kalman_mle(data, model.params,
                                   model.params.to_unconstrained(THETA))
        box = {"a": (0.1, 0.95), "sigma": (0.3, 3.0), "tau": (0.3, 3.0)}
        gaps = []
        for s in range(20):
            starts = swarm_from_box(model.params, box, 1, seed=1000 + s)
            swarm0 = np.tile(starts[0], (500, 1))
            res = run_if2(model, data, swarm0, CoolingSchedule(0.1, 0.95), 40,
                          seed=s)
            ll = kalman_loglik(data, res.theta_natural)
            gaps.append(ll_mle - ll)
        assert np.median(gaps) < 2.0


class TestSwarmIo:
    def test_roundtrip(self, tmp_path):
        model, _ = lgssm_fixture(n=3)
        swarm = np.random.default_rng(0).normal(size=(10, 3))
        path = tmp_path / "swarm.csv"
        save_swarm(model.params, swarm, path)
        back = load_swarm(model.params, path)
        assert np.array_equal(back, swarm)

    def test_header_mismatch_rejected(self, tmp_path):
        model, _ = lgssm_fixture(n=3)
        path = tmp_path / "swarm.csv"
        path.write_text("x,y,z\n1,2,3\n")
        with pytest.raises(UsageError):
            load_swarm(model.params, path)

    def test_box_draws_inside(self):
        model, _ = lgssm_fixture(n=3)
        box = {"a": (0.2, 0.9), "sigma": (0.5, 2.0), "tau": (0.5, 2.0)}
        V = swarm_from_box(model.params, box, 200, seed=3)
        nat = [model.params.to_natural(v) for v in V]
        for k, (lo, hi) in box.items():
            vals = np.array([d[k] for d in nat])
            assert np.all(vals >= lo) and np.all(vals <= hi)
