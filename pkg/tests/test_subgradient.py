from dataclasses import replace

import numpy as np
import pytest

from stosqp.core import ConstantBeta, DiminishingBeta
from stosqp.metrics import best_iterate
from stosqp.oracles import ExactOracle, GaussianOracle, NoiseConfig
from stosqp.problems import builtin_problem
from stosqp.rng import Streams
from stosqp.subgradient import DEFAULT_TAU_SWEEP, SubgradConfig, penalty, run_subgradient, subgradient


class TestSubgradient:
    def test_chain_rule(self):
        got = subgradient(1.0, np.array([1.0, 0.0]), np.array([-2.0]), np.array([[0.0, 1.0]]))
        np.testing.assert_array_equal(got, [1.0, -1.0])

    def test_sign_zero(self):
        g = np.array([0.3, -0.7])
        got = subgradient(0.5, g, np.zeros(1), np.array([[4.0, 5.0]]))
        np.testing.assert_array_equal(got, 0.5 * g)

    def test_small_tau(self):
        got = subgradient(0.01, np.array([100.0, 0.0]), np.array([1.0]), np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(got, [2.0, 0.0], atol=1e-15)


class TestConfig:
    def test_step(self):
        assert SubgradConfig(tau=1.0, lip_l=1.0, lip_gamma=1.0).step(0.1) == 0.05

    def test_default_sweep(self):
        assert DEFAULT_TAU_SWEEP == pytest.approx([1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0], rel=1e-15)

    @pytest.mark.parametrize("kw", [dict(tau=0.0), dict(tau_sweep=())])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SubgradConfig(**kw)


class TestRun:
    problem = builtin_problem("quad-plane")

    def run(self, max_iter, beta, tau=1.0, lip=(1.0, 1.0), oracle=None, seed=0):
        cfg = SubgradConfig(tau=tau, lip_l=lip[0], lip_gamma=lip[1], max_iter=max_iter)
        return run_subgradient(self.problem, oracle or ExactOracle(self.problem), cfg, beta, seed)

    def test_empty(self):
        assert self.run(0, ConstantBeta(0.1)) == []

    def test_constant_step(self):
        records = self.run(50, ConstantBeta(0.1))
        assert {r.alpha for r in records} == {0.05}
        assert records[0].tau_trial is None and records[0].alpha_min is None

    def test_iterates_follow_subgradient(self):
        records = self.run(3, ConstantBeta(0.1))
        x = self.problem.x1
        s = subgradient(1.0, *self.problem.truth(x))
        np.testing.assert_allclose(records[1].x, x - 0.05 * s, atol=1e-15)

    def test_penalty_decreases_between_kinks(self):
        # phi(., 1) is smooth with unit curvature while sign(c) is fixed, and a 0.05 step decreases it there
        records = self.run(100, ConstantBeta(0.1))
        phis = [penalty(self.problem, r.x, 1.0) for r in records]
        signs = [np.sign(self.problem.eval_c(r.x)[0]) for r in records]
        smooth_steps = 0
        for i in range(len(records) - 1):
            if signs[i] == signs[i + 1] != 0:
                assert phis[i + 1] <= phis[i]
                smooth_steps += 1
        assert smooth_steps >= 3
        assert phis[-1] < 0.2 * phis[0]

    def test_dimin_feasibility_floor(self):
        lip = self.problem.lipschitz
        records = self.run(5000, DiminishingBeta(), lip=(lip.lip_l, lip.lip_gamma))
        best = best_iterate(records, self.problem)
        assert best.errors.feas <= 1e-3
        assert best.branch == "kkt"

    def test_replay(self):
        oracle = GaussianOracle(self.problem, NoiseConfig(1e-2, 1e-2, 1e-1))
        a = self.run(40, ConstantBeta(0.1), oracle=oracle, seed=Streams(2, 5))
        b = self.run(40, ConstantBeta(0.1), oracle=oracle, seed=Streams(2, 5))
        assert all(r.x.tobytes() == s.x.tobytes() for r, s in zip(a, b))
        assert all(r.extra["draws"] == 1 for r in a)

    def test_stops_on_rank_loss(self):
        problem = builtin_problem("sphere-linear")
        cfg = SubgradConfig(tau=1.0, max_iter=10)
        # x = 0 makes the sphere Jacobian vanish, so the metrics cannot be formed
        assert run_subgradient(replace(problem, x1=np.zeros(2)), ExactOracle(problem), cfg,
                               ConstantBeta(0.1), 0) == []

    def test_time_budget(self):
        cfg = SubgradConfig(tau=1.0, max_iter=10 ** 9, max_time=0.05)
        records = run_subgradient(self.problem, ExactOracle(self.problem), cfg, ConstantBeta(0.1), 0)
        assert 0 < len(records) < 10 ** 9
