import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmdrl import env as E
from qmdrl import qpolicy as qp
from qmdrl import qsim
from qmdrl import training as T
from qmdrl.baseline import MlpConfig
from qmdrl.errors import ConfigError, InvalidArgumentError, NumericalError, UnsupportedComponentError


def cos_loss(theta):
    """<Z> after RY(theta)|0>, simulated rather than written in closed form."""
    s = qsim.apply_gate(qsim.new_zero_state(1), qsim.RY(0, float(theta[0])))
    return qsim.expectation_z(s, 0)


def small_env():
    return E.EnvConfig(grid_width=4, grid_height=4, num_users=4, steps_per_episode=5)


def small_qconfig(env):
    return qp.QPolicyConfig(obs_dim=env.obs_dim, feature_bounds=env.feature_bounds(), num_blocks=1)


class FixedPolicy:
    """Stub whose Q-values are a fixed vector, for hand-checkable arithmetic."""

    def __init__(self, q):
        self.q = np.asarray(q, dtype=float)

    def q_values(self, params, obs):
        return self.q + params[0]


def learner_with(q, params=(0.0,)):
    p = np.array(params, dtype=float)
    return T.AgentLearner(0, FixedPolicy(q), p, p.copy())


finite = st.floats(-50, 50).map(lambda x: round(x, 6))


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kw", [dict(gamma=1.0), dict(gamma=-0.1), dict(sdq_epsilon=0.0), dict(target_update_interval=0)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            T.TrainConfig(**kw)

    def test_temperature_schedule(self):
        c = T.TrainConfig(temperature_initial=2.0, temperature_final=0.1, temperature_decay_steps=100)
        assert c.temperature(0) == 2.0
        assert c.temperature(50) == pytest.approx(1.05)
        assert c.temperature(100) == c.temperature(10_000) == pytest.approx(0.1)


class TestTdTarget:
    def test_terminal(self):
        assert T.td_target(1.0, None, learner_with([5.0]), 0.9, True) == 1.0

    def test_zero_gamma(self):
        assert T.td_target(0.3, np.zeros(1), learner_with([5.0]), 0.0, False) == 0.3

    def test_forced_arithmetic(self):
        assert T.td_target(1.0, np.zeros(1), learner_with([0.5, 2.0, -1.0]), 0.9, False) == pytest.approx(2.8)

    def test_uses_target_not_actor(self):
        lr = learner_with([0.0, 2.0])
        lr.actor_params = np.array([100.0])
        assert T.td_target(1.0, np.zeros(1), lr, 0.9, False) == pytest.approx(2.8)


class TestLoss:
    def test_zero(self):
        assert T.loss(learner_with([1.0, 2.0]), [(None, 0, 1.0), (None, 1, 2.0)]) == 0.0

    def test_single(self):
        assert T.loss(learner_with([2.0]), [(None, 0, 3.0)]) == 1.0

    def test_mean_of_two(self):
        assert T.loss(learner_with([0.0, 0.0]), [(None, 0, 1.0), (None, 1, -3.0)]) == 5.0

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            T.loss(learner_with([0.0]), [])

    # rounded so squared errors cannot underflow to zero
    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=10))
    def test_non_negative(self, pairs):
        lr = learner_with([p for p, _ in pairs])
        value = T.loss(lr, [(None, i, y) for i, (_, y) in enumerate(pairs)])
        assert value >= 0
        assert (value == 0) == all(p == y for p, y in pairs)


class TestGradSdq:
    def test_cos_at_pi_over_three(self):
        g = T.grad_sdq(cos_loss, [math.pi / 3], 0.01)
        assert g[0] == pytest.approx(-0.86603, abs=1e-4)

    def test_extremum(self):
        assert abs(T.grad_sdq(cos_loss, [0.0], 0.01)[0]) < 1e-6

    def test_error_halving(self):
        exact = -math.sin(math.pi / 3)
        e1 = abs(T.grad_sdq(cos_loss, [math.pi / 3], 0.02)[0] - exact)
        e2 = abs(T.grad_sdq(cos_loss, [math.pi / 3], 0.01)[0] - exact)
        assert 3.2 <= e1 / e2 <= 4.8

    def test_evaluation_count_and_purity(self):
        calls = []
        params = np.array([0.1, 0.2, 0.3])

        def f(p):
            calls.append(p.copy())
            return float(np.sum(p**2))

        g = T.grad_sdq(f, params, 0.01)
        assert len(calls) == 6
        np.testing.assert_array_equal(params, [0.1, 0.2, 0.3])
        np.testing.assert_allclose(g, 2 * params, atol=1e-12)

    def test_vectorized_matches_loop(self, rng):
        w = rng.standard_normal(4)
        f = lambda p: float(np.sin(p) @ w)
        fv = lambda rows: np.sin(rows) @ w
        p = rng.standard_normal(4)
        np.testing.assert_allclose(T.grad_sdq(f, p, 0.01), T.grad_sdq(fv, p, 0.01, vectorized=True), atol=1e-12)

    def test_non_finite_names_component(self):
        f = lambda p: math.inf if p[2] > 1 else 0.0
        with pytest.raises(NumericalError) as info:
            T.grad_sdq(f, [0.0, 0.0, 0.995], 0.01)
        assert info.value.component == 2

    def test_bad_epsilon(self):
        with pytest.raises(InvalidArgumentError):
            T.grad_sdq(cos_loss, [0.0], 0.0)


class TestParameterShift:
    def test_cos(self):
        g = T.parameter_shift_grad(cos_loss, [math.pi / 3], 0)
        assert g == pytest.approx(-math.sin(math.pi / 3), abs=1e-12)

    def test_extremum(self):
        assert abs(T.parameter_shift_grad(cos_loss, [0.0], 0)) < 1e-15

    def test_agrees_with_sdq_on_policy_circuits(self, rng):
        env = E.EnvConfig()
        config = qp.QPolicyConfig(obs_dim=env.obs_dim, feature_bounds=env.feature_bounds())
        for _ in range(20):
            flat = rng.uniform(-math.pi, math.pi, qp.param_count(config))
            obs = rng.uniform(0, 8, env.obs_dim)
            wire = int(rng.integers(5))
            f = lambda p: qp.forward(config, qp.QPolicyParams.unflatten(config, p), obs)[wire]
            sdq = T.grad_sdq(f, flat, 0.01)
            for k in T.shift_eligible(config):
                assert sdq[k] == pytest.approx(T.parameter_shift_grad(f, flat, k, config), abs=1e-4)

    def test_rejects_cu3_component(self):
        env = E.EnvConfig()
        config = qp.QPolicyConfig(obs_dim=env.obs_dim, feature_bounds=env.feature_bounds())
        with pytest.raises(UnsupportedComponentError):
            T.parameter_shift_grad(lambda p: 0.0, np.zeros(45), 15, config)


class TestSgd:
    def test_zero_gradient(self):
        np.testing.assert_array_equal(T.sgd_step([1.0, 2.0], [0.0, 0.0], 0.5), [1.0, 2.0])

    def test_forced_arithmetic(self):
        np.testing.assert_allclose(T.sgd_step([1.0], [2.0], 0.1), [0.8])

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            T.sgd_step([1.0, 2.0], [1.0], 0.1)

    def test_cos_descent(self):
        theta = np.array([math.pi / 3])
        for _ in range(50):
            theta = T.sgd_step(theta, T.grad_sdq(cos_loss, theta, 0.01), 0.1)
        # direct iteration of theta += 0.1 sin(theta) reaches the same region
        assert cos_loss(theta) < -0.95

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=6).filter(lambda v: any(abs(x) > 1e-3 for x in v)))
    def test_descent_on_quadratic(self, values):
        f = lambda p: float(np.sum(np.asarray(p) ** 2))
        p = np.array(values)
        assert f(T.sgd_step(p, 2 * p, 1e-3)) < f(p)


class TestTargetUpdate:
    def test_interval_one(self):
        lr = learner_with([0.0])
        for k in range(3):
            lr.actor_params = np.array([float(k + 1)])
            T.maybe_update_target(lr, 1)
            np.testing.assert_array_equal(lr.target_params, lr.actor_params)

    def test_interval_ten(self):
        lr = learner_with([0.0])
        for step in range(1, 10):
            lr.actor_params = np.array([float(step)])
            T.maybe_update_target(lr, 10)
        np.testing.assert_array_equal(lr.target_params, [0.0])
        lr.actor_params = np.array([10.0])
        T.maybe_update_target(lr, 10)
        assert lr.target_params.tobytes() == lr.actor_params.tobytes()
        assert lr.target_params is not lr.actor_params

    @given(st.integers(1, 7), st.integers(1, 40))
    def test_changes_only_on_multiples(self, k, n):
        lr = learner_with([0.0])
        prev = lr.target_params.copy()
        for step in range(1, n + 1):
            lr.actor_params = np.array([float(step)])
            T.maybe_update_target(lr, k)
            if step % k == 0:
                np.testing.assert_array_equal(lr.target_params, [float(step)])
            else:
                np.testing.assert_array_equal(lr.target_params, prev)
            prev = lr.target_params.copy()


class TestSummarize:
    def test_window(self):
        rows = [{"total_reward": float(i), "support_rate": 0.5, "qos": 0.25} for i in range(30)]
        s = T.summarize(rows, 20)
        assert s["final_total_reward_mean"] == pytest.approx(np.mean(range(10, 30)))
        assert s["final_total_reward_std"] == pytest.approx(np.std(range(10, 30)))
        assert s["final_qos_std"] == 0.0 and s["episodes"] == 30

    def test_empty(self):
        assert T.summarize([], 20)["final_total_reward_mean"] is None


class TestTrainRun:
    def test_zero_episodes(self):
        env = small_env()
        arts = T.train_run(env, small_qconfig(env), T.TrainConfig(episodes=0), 0)
        assert arts.metrics == [] and arts.failure is None

    def test_deterministic(self):
        env = small_env()
        pc = small_qconfig(env)
        a = T.train_run(env, pc, T.TrainConfig(episodes=2), 11)
        b = T.train_run(env, pc, T.TrainConfig(episodes=2), 11)
        assert a.metrics == b.metrics
        for x, y in zip(a.params, b.params):
            assert x.tobytes() == y.tobytes()
        c = T.train_run(env, pc, T.TrainConfig(episodes=2), 12)
        assert c.metrics != a.metrics

    def test_metrics_rows(self):
        env = small_env()
        arts = T.train_run(env, small_qconfig(env), T.TrainConfig(episodes=3), 0, trajectory_episodes=[1])
        assert [r["episode"] for r in arts.metrics] == [0, 1, 2]
        assert list(arts.metrics[0]) == T.metric_columns(2)
        for r in arts.metrics:
            assert r["total_reward"] == pytest.approx(r["reward_agent_0"] + r["reward_agent_1"])
            assert 0 <= r["support_rate"] <= 1 and r["mean_loss"] >= 0
        # initial frame plus one per step
        assert len(arts.trajectories) == 6 and {f["episode"] for f in arts.trajectories} == {1}

    def test_zero_learning_rate_keeps_params(self):
        env = small_env()
        pc = small_qconfig(env)
        arts = T.train_run(env, pc, T.TrainConfig(episodes=2, learning_rate=0.0), 4)
        init_rng = T._seed_streams(4)[0]
        for m, p in enumerate(arts.params):
            np.testing.assert_array_equal(p, T.make_policy(pc).init_params(init_rng, math.pi))

    def test_classical_runs(self):
        env = small_env()
        mc = MlpConfig(obs_dim=env.obs_dim, feature_bounds=env.feature_bounds(), hidden_size=8)
        arts = T.train_run(env, mc, T.TrainConfig(episodes=2), 0)
        assert len(arts.metrics) == 2 and arts.params[0].size == (env.obs_dim + 1) * 8 + 9 * 5

    def test_non_finite_loss_aborts(self):
        env = small_env()
        mc = MlpConfig(obs_dim=env.obs_dim, feature_bounds=env.feature_bounds(), hidden_size=4)
        arts = T.train_run(env, mc, T.TrainConfig(episodes=3, learning_rate=1e200), 0)
        assert arts.failure is not None
        assert "non-finite" in arts.failure["message"]
        assert arts.summary == {}

    def test_evaluate_is_greedy_and_seeded(self, rng):
        env = small_env()
        pc = small_qconfig(env)
        params = [rng.uniform(-3, 3, qp.param_count(pc)) for _ in range(2)]
        rows, frames = T.evaluate(env, pc, params, 2, 9)
        again, _ = T.evaluate(env, pc, params, 2, 9)
        assert [r["total_reward"] for r in rows] == [r["total_reward"] for r in again]
        policy = T.make_policy(pc)
        state = E.EnvState(
            np.array(frames[0]["drone_positions"]),
            np.array(frames[0]["user_positions"]),
            np.zeros(2, bool),
        )
        for f in frames[1:6]:
            obs = E.observe_all(state, env)
            acts = [int(np.argmax(policy.preferences(p, o))) for p, o in zip(params, obs)]
            state, _, _, _ = E.step(state, acts, env)
            assert state.drone_positions.tolist() == f["drone_positions"]
