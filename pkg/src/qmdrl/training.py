"""Independent per-agent Q-learning with target networks.

Every agent owns an actor and a target parameter vector. After each joint
environment step, each agent regresses ``q(actor, s)[a]`` onto the TD target
``r + gamma * max q(target, s')`` with plain SGD. Quantum policies get their
gradient from symmetric difference quotients; the classical baseline uses its
analytic gradient.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import env as drone_env
from .baseline import MlpConfig, MlpParams, mlp_forward, mlp_grad, mlp_param_count
from .errors import ConfigError, InvalidArgumentError, NumericalError, UnsupportedComponentError
from .qpolicy import (
    QPolicyConfig,
    action_distribution,
    forward_batch,
    param_count,
    scale_features,
    select_action,
)


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    learning_rate: float = 0.01
    sdq_epsilon: float = 0.01
    target_update_interval: int = 200
    temperature_initial: float = 2.0
    temperature_final: float = 0.1
    temperature_decay_steps: int = 4800
    episodes: int = 200
    init_scale: float = math.pi

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must be in [0, 1)", key="train.gamma")
        # 0 is allowed: it freezes the policy for random-baseline runs
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0", key="train.learning_rate")
        if not self.sdq_epsilon > 0:
            raise ConfigError("sdq_epsilon must be positive", key="train.sdq_epsilon")
        if self.target_update_interval < 1:
            raise ConfigError("target_update_interval must be >= 1", key="train.target_update_interval")
        if not (self.temperature_initial > 0 and self.temperature_final > 0):
            raise ConfigError("temperatures must be positive", key="train.temperature_initial")
        if self.temperature_decay_steps < 0:
            raise ConfigError("temperature_decay_steps must be >= 0", key="train.temperature_decay_steps")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0", key="train.episodes")
        if self.init_scale < 0:
            raise ConfigError("init_scale must be >= 0", key="train.init_scale")

    def temperature(self, step: int) -> float:
        if self.temperature_decay_steps == 0:
            return self.temperature_final
        frac = min(1.0, step / self.temperature_decay_steps)
        return self.temperature_initial + (self.temperature_final - self.temperature_initial) * frac


@dataclass
class Transition:
    observations: list[np.ndarray]
    actions: list[int]
    rewards: list[float]
    next_observations: list[np.ndarray]
    terminal: bool

    def __post_init__(self):
        m = len(self.observations)
        if not len(self.actions) == len(self.rewards) == len(self.next_observations) == m:
            raise InvalidArgumentError("transition lists must all have one entry per agent")


# -- policy adapters ---------------------------------------------------------


class QuantumPolicy:
    kind = "quantum"

    def __init__(self, config: QPolicyConfig):
        self.config = config
        self.param_count = param_count(config)

    def init_params(self, rng: np.random.Generator, scale: float) -> np.ndarray:
        return rng.uniform(-scale, scale, self.param_count)

    def preferences(self, params: np.ndarray, obs: np.ndarray) -> np.ndarray:
        """Raw Pauli-Z observables, the softmax logits for exploration."""
        return forward_batch(self.config, params[None, :], obs)[0]

    def q_values(self, params: np.ndarray, obs: np.ndarray) -> np.ndarray:
        return self.config.value_scale * self.preferences(params, obs)

    def gradient(self, params, obs, action: int, target: float, epsilon: float) -> np.ndarray:
        scale = self.config.value_scale

        def batch_loss(rows: np.ndarray) -> np.ndarray:
            pred = scale * forward_batch(self.config, rows, obs)[:, action]
            return (pred - target) ** 2

        return grad_sdq(batch_loss, params, epsilon, vectorized=True)


class ClassicalPolicy:
    """MLP Q-network fed the same observations, rescaled to [-1, 1]."""

    kind = "classical"

    def __init__(self, config: MlpConfig):
        self.config = config
        self.param_count = mlp_param_count(config.obs_dim, config.hidden_size, config.num_actions)

    def _unflatten(self, flat) -> MlpParams:
        c = self.config
        return MlpParams.unflatten(c.obs_dim, c.hidden_size, c.num_actions, flat)

    def _inputs(self, obs) -> np.ndarray:
        return scale_features(obs, self.config.feature_bounds) / math.pi

    def init_params(self, rng: np.random.Generator, scale: float) -> np.ndarray:
        c = self.config
        return MlpParams.init(c.obs_dim, c.hidden_size, c.num_actions, rng).flatten()

    def q_values(self, params, obs) -> np.ndarray:
        return mlp_forward(self._unflatten(params), self._inputs(obs))

    def preferences(self, params, obs) -> np.ndarray:
        return self.q_values(params, obs) / self.config.value_scale

    def gradient(self, params, obs, action: int, target: float, epsilon: float) -> np.ndarray:
        return mlp_grad(self._unflatten(params), self._inputs(obs), action, target)


def make_policy(config: QPolicyConfig | MlpConfig) -> QuantumPolicy | ClassicalPolicy:
    if isinstance(config, QPolicyConfig):
        return QuantumPolicy(config)
    if isinstance(config, MlpConfig):
        return ClassicalPolicy(config)
    raise InvalidArgumentError(f"unknown policy config {type(config).__name__}")


# -- learner operations ------------------------------------------------------


@dataclass
class AgentLearner:
    agent_id: int
    policy: QuantumPolicy | ClassicalPolicy = field(repr=False)
    actor_params: np.ndarray
    target_params: np.ndarray
    steps_since_target_update: int = 0


def td_target(
    reward: float, next_obs, target_learner: AgentLearner, gamma: float, terminal: bool
) -> float:
    if terminal:
        return float(reward)
    if gamma == 0:
        return float(reward)
    q_next = target_learner.policy.q_values(target_learner.target_params, next_obs)
    return float(reward + gamma * np.max(q_next))


def loss(learner: AgentLearner, transitions: Sequence[tuple[np.ndarray, int, float]]) -> float:
    """Mean squared TD error of the actor over ``(obs, action, target)`` items."""
    if not transitions:
        raise InvalidArgumentError("loss needs at least one transition")
    errs = [
        learner.policy.q_values(learner.actor_params, obs)[action] - target
        for obs, action, target in transitions
    ]
    return float(np.mean(np.square(errs)))


def grad_sdq(
    loss_fn: Callable, params: Sequence[float], epsilon: float, vectorized: bool = False
) -> np.ndarray:
    """Central-difference gradient, two loss evaluations per component.

    With ``vectorized=True`` ``loss_fn`` receives all ``2 * P`` perturbed
    parameter vectors as rows of one array (``+eps`` rows first) and must
    return one loss per row.
    """
    if not epsilon > 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    base = np.array(params, dtype=float)
    p = base.size
    shift = epsilon * np.eye(p)
    rows = np.vstack([base + shift, base - shift])
    if vectorized:
        losses = np.asarray(loss_fn(rows), dtype=float)
    else:
        losses = np.array([loss_fn(r) for r in rows], dtype=float)
    if losses.shape != (2 * p,):
        raise InvalidArgumentError(f"expected {2 * p} loss values, got shape {losses.shape}")
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        comp = int(bad[0] % p)
        raise NumericalError(f"non-finite loss at parameter component {comp}", component=comp)
    return (losses[:p] - losses[p:]) / (2 * epsilon)


def shift_eligible(config: QPolicyConfig) -> range:
    """Flat indices of the encoder RZ angles, where the two-term shift rule is exact."""
    return range(config.repetitions * config.num_qubits)


def parameter_shift_grad(
    observable_fn: Callable,
    params: Sequence[float],
    component: int,
    config: QPolicyConfig | None = None,
) -> float:
    """Exact derivative of ``observable_fn`` w.r.t. one single-rotation angle.

    With ``config`` given, ``component`` is a flat Q-policy parameter index and
    CU3 angles are rejected.
    """
    base = np.array(params, dtype=float)
    if not 0 <= component < base.size:
        raise InvalidArgumentError(f"component {component} out of range")
    if config is not None and component not in shift_eligible(config):
        raise UnsupportedComponentError(
            f"component {component} is a CU3 angle; the two-term shift rule does not apply"
        )
    plus, minus = base.copy(), base.copy()
    plus[component] += math.pi / 2
    minus[component] -= math.pi / 2
    return float((observable_fn(plus) - observable_fn(minus)) / 2)


def sgd_step(params: Sequence[float], gradient: Sequence[float], lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    if params.shape != gradient.shape:
        raise InvalidArgumentError(f"parameter shape {params.shape} != gradient shape {gradient.shape}")
    return params - lr * gradient


def maybe_update_target(learner: AgentLearner, interval: int) -> AgentLearner:
    if interval < 1:
        raise InvalidArgumentError("target update interval must be >= 1")
    learner.steps_since_target_update += 1
    if learner.steps_since_target_update >= interval:
        learner.target_params = learner.actor_params.copy()
        learner.steps_since_target_update = 0
    return learner


# -- runs --------------------------------------------------------------------


@dataclass
class RunArtifacts:
    run_id: str = ""
    config: dict = field(default_factory=dict)
    metrics: list[dict] = field(default_factory=list)
    trajectories: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    params: list[np.ndarray] = field(default_factory=list, repr=False)
    failure: dict | None = None


def metric_columns(num_drones: int) -> list[str]:
    return (
        ["episode", "total_reward"]
        + [f"reward_agent_{m}" for m in range(num_drones)]
        + ["mean_loss", "support_rate", "qos", "temperature"]
    )


def summarize(metrics: Sequence[dict], window: int = 20) -> dict:
    """Final-window aggregates, recomputable from the metrics table alone."""
    tail = list(metrics)[-window:] if window > 0 else []
    out: dict = {"episodes": len(metrics), "window": window}
    for key in ("total_reward", "support_rate", "qos"):
        vals = np.array([row[key] for row in tail], dtype=float)
        out[f"final_{key}_mean"] = float(vals.mean()) if vals.size else None
        out[f"final_{key}_std"] = float(vals.std()) if vals.size else None
    return out


def _seed_streams(seed: int) -> tuple[np.random.Generator, ...]:
    init, env_stream, act = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(s) for s in (init, env_stream, act))


def make_learners(
    policy, num_agents: int, rng: np.random.Generator, init_scale: float
) -> list[AgentLearner]:
    learners = []
    for m in range(num_agents):
        theta = policy.init_params(rng, init_scale)
        learners.append(AgentLearner(m, policy, theta, theta.copy()))
    return learners


def train_run(
    env_config: drone_env.EnvConfig,
    policy_config: QPolicyConfig | MlpConfig,
    train_config: TrainConfig,
    seed: int,
    on_episode: Callable[[dict], None] | None = None,
    trajectory_episodes: Sequence[int] | None = None,
    window: int = 20,
) -> RunArtifacts:
    """Train one policy per drone for ``train_config.episodes`` episodes.

    Per-step trajectory frames are kept for ``trajectory_episodes`` (default:
    the final episode). ``on_episode`` sees each metrics row as it completes.
    """
    policy = make_policy(policy_config)
    init_rng, env_rng, act_rng = _seed_streams(seed)
    learners = make_learners(policy, env_config.num_drones, init_rng, train_config.init_scale)
    if trajectory_episodes is None:
        trajectory_episodes = [train_config.episodes - 1]
    record = set(trajectory_episodes)

    arts = RunArtifacts()
    lr, gamma, eps = train_config.learning_rate, train_config.gamma, train_config.sdq_epsilon
    global_step = 0
    for episode in range(train_config.episodes):
        state, obs = drone_env.reset(env_config, env_rng)
        temp0 = train_config.temperature(global_step)
        ep_reward = np.zeros(env_config.num_drones)
        losses, support, quality = [], [], []
        if episode in record:
            arts.trajectories.append({"episode": episode, **drone_env.frame(state, env_config)})
        for _ in range(env_config.steps_per_episode):
            temp = train_config.temperature(global_step)
            prefs = [policy.preferences(l.actor_params, o) for l, o in zip(learners, obs)]
            actions = [
                select_action(action_distribution(p, temp), "sample", act_rng) for p in prefs
            ]
            state, next_obs, rewards, step_metrics = drone_env.step(state, actions, env_config)
            terminal = state.t >= env_config.steps_per_episode
            for l, o, a, r, o2, p in zip(learners, obs, actions, rewards, next_obs, prefs):
                y = td_target(r, o2, l, gamma, terminal)
                pred = _q_from_preferences(policy, p)[a]
                with np.errstate(over="ignore", invalid="ignore"):
                    err2 = (pred - y) ** 2  # non-finite values are handled below
                if not math.isfinite(err2):
                    arts.failure = {
                        "episode": episode,
                        "step": state.t,
                        "agent": l.agent_id,
                        "message": f"non-finite loss {err2!r}",
                    }
                    arts.params = [x.actor_params for x in learners]
                    return arts
                losses.append(err2)
                if lr > 0:
                    try:
                        g = policy.gradient(l.actor_params, o, a, y, eps)
                    except NumericalError as exc:
                        arts.failure = {
                            "episode": episode,
                            "step": state.t,
                            "agent": l.agent_id,
                            "message": str(exc),
                            "component": exc.component,
                        }
                        arts.params = [x.actor_params for x in learners]
                        return arts
                    l.actor_params = sgd_step(l.actor_params, g, lr)
                maybe_update_target(l, train_config.target_update_interval)
            ep_reward += rewards
            support.append(step_metrics.support_rate)
            quality.append(step_metrics.qos)
            if episode in record:
                arts.trajectories.append(
                    {"episode": episode, **drone_env.frame(state, env_config, rewards)}
                )
            obs = next_obs
            global_step += 1

        row = {"episode": episode, "total_reward": float(ep_reward.sum())}
        for m, r in enumerate(ep_reward):
            row[f"reward_agent_{m}"] = float(r)
        row["mean_loss"] = float(np.mean(losses))
        row["support_rate"] = float(np.mean(support))
        row["qos"] = float(np.mean(quality))
        row["temperature"] = float(temp0)
        arts.metrics.append(row)
        if on_episode is not None:
            on_episode(row)

    arts.params = [l.actor_params.copy() for l in learners]
    arts.summary = summarize(arts.metrics, window)
    return arts


def _q_from_preferences(policy, prefs: np.ndarray) -> np.ndarray:
    return policy.config.value_scale * np.asarray(prefs)


def evaluate(
    env_config: drone_env.EnvConfig,
    policy_config: QPolicyConfig | MlpConfig,
    params: Sequence[np.ndarray],
    episodes: int,
    seed: int,
) -> tuple[list[dict], list[dict]]:
    """Greedy rollouts; returns per-episode metric rows and every step frame."""
    policy = make_policy(policy_config)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    rows, frames = [], []
    for episode in range(episodes):
        state, obs = drone_env.reset(env_config, rng)
        frames.append({"episode": episode, **drone_env.frame(state, env_config)})
        ep_reward = np.zeros(env_config.num_drones)
        support, quality = [], []
        for _ in range(env_config.steps_per_episode):
            actions = [
                select_action(action_distribution(policy.preferences(p, o), 1.0), "greedy")
                for p, o in zip(params, obs)
            ]
            state, obs, rewards, step_metrics = drone_env.step(state, actions, env_config)
            ep_reward += rewards
            support.append(step_metrics.support_rate)
            quality.append(step_metrics.qos)
            frames.append({"episode": episode, **drone_env.frame(state, env_config, rewards)})
        row = {"episode": episode, "total_reward": float(ep_reward.sum())}
        for m, r in enumerate(ep_reward):
            row[f"reward_agent_{m}"] = float(r)
        row.update(
            mean_loss=float("nan"),
            support_rate=float(np.mean(support)),
            qos=float(np.mean(quality)),
            temperature=0.0,
        )
        rows.append(row)
    return rows, frames


def config_snapshot(env_config, policy_config, train_config) -> dict:
    return {"env": asdict(env_config), "policy": asdict(policy_config), "train": asdict(train_config)}
