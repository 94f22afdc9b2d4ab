"""Multi-drone coverage world.

Drones move one cell per step on a bounded ``width x height`` plane and serve
static users within ``coverage_radius``. Each covered user is credited to its
nearest active covering drone (ties to the lowest id), which drives the
per-drone rewards. Scheduled malfunctions freeze a drone in place and remove
it from service for the rest of the episode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, EpisodeFinishedError, InvalidArgumentError

NUM_ACTIONS = 5
# action index -> (dx, dy); 4 hovers
MOVES = np.array([(0, 1), (0, -1), (1, 0), (-1, 0), (0, 0)], dtype=float)
# sector layout of the observation; see ``sector_counts``
SECTOR_NAMES = ("NE", "N", "S", "E", "W", "NW", "SW", "SE")
NUM_SECTORS = len(SECTOR_NAMES)


@dataclass(frozen=True)
class EnvConfig:
    grid_width: int = 8
    grid_height: int = 8
    num_drones: int = 2
    num_users: int = 12
    coverage_radius: float = 2.5
    steps_per_episode: int = 40
    w_support: float = 0.7
    w_qos: float = 0.3
    malfunction_schedule: tuple[tuple[int, int], ...] = ()
    eval_malfunction_schedule: tuple[tuple[int, int], ...] = ((20, 1),)

    def __post_init__(self):
        if self.grid_width <= 0 or self.grid_height <= 0:
            raise ConfigError("grid dimensions must be positive", key="env.grid_width")
        if self.num_drones < 1:
            raise ConfigError("need at least one drone", key="env.num_drones")
        if self.num_users < 1:
            raise ConfigError("need at least one user", key="env.num_users")
        if not self.coverage_radius > 0:
            raise ConfigError("coverage radius must be positive", key="env.coverage_radius")
        if self.steps_per_episode < 1:
            raise ConfigError("steps_per_episode must be >= 1", key="env.steps_per_episode")
        if self.w_support < 0 or self.w_qos < 0 or (self.w_support == 0 and self.w_qos == 0):
            raise ConfigError("reward weights must be >= 0 and not both 0", key="env.w_support")
        # the evaluation schedule is checked when it is switched in, so a
        # single-drone config can keep the two-drone default
        for t, drone in self.malfunction_schedule:
            if not 0 <= drone < self.num_drones:
                raise ConfigError(f"drone id {drone} out of range", key="env.malfunction_schedule")
            if t < 1:
                raise ConfigError(f"malfunction timestep {t} must be >= 1", key="env.malfunction_schedule")

    @property
    def obs_dim(self) -> int:
        return 2 + 2 * (self.num_drones - 1) + NUM_SECTORS

    def feature_bounds(self) -> tuple[tuple[float, float], ...]:
        pos = ((0.0, float(self.grid_width)), (0.0, float(self.grid_height)))
        return pos * self.num_drones + ((0.0, float(self.num_users)),) * NUM_SECTORS

    def with_eval_malfunctions(self) -> "EnvConfig":
        return replace(self, malfunction_schedule=self.eval_malfunction_schedule)


@dataclass
class EnvState:
    drone_positions: np.ndarray  # (M, 2)
    user_positions: np.ndarray  # (U, 2)
    malfunctioned: np.ndarray  # (M,) bool
    t: int = 0

    def copy(self) -> "EnvState":
        return EnvState(
            self.drone_positions.copy(), self.user_positions.copy(), self.malfunctioned.copy(), self.t
        )


@dataclass
class StepMetrics:
    support_rate: float
    qos: float
    covered: np.ndarray = field(repr=False)


def _distances(state: EnvState) -> np.ndarray:
    """User-by-drone distance matrix with malfunctioned drones at +inf."""
    diff = state.user_positions[:, None, :] - state.drone_positions[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    dist[:, state.malfunctioned] = np.inf
    return dist


def _assignment(state: EnvState, config: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """Serving drone per user (-1 if uncovered) and its distance."""
    dist = _distances(state)
    if dist.shape[0] == 0:
        return np.zeros(0, dtype=int), np.zeros(0)
    nearest = np.argmin(dist, axis=1)  # argmin keeps the lowest id on ties
    d = dist[np.arange(dist.shape[0]), nearest]
    serving = np.where(d <= config.coverage_radius, nearest, -1)
    return serving, d


def support_rate(state: EnvState, config: EnvConfig) -> float:
    serving, _ = _assignment(state, config)
    return float(np.count_nonzero(serving >= 0)) / config.num_users


def _user_quality(serving: np.ndarray, d: np.ndarray, config: EnvConfig) -> np.ndarray:
    return np.where(serving >= 0, np.maximum(0.0, 1.0 - d / config.coverage_radius), 0.0)


def qos(state: EnvState, config: EnvConfig) -> float:
    serving, d = _assignment(state, config)
    return float(_user_quality(serving, d, config).sum()) / config.num_users


def reward(state: EnvState, config: EnvConfig) -> np.ndarray:
    serving, d = _assignment(state, config)
    quality = _user_quality(serving, d, config)
    out = np.zeros(config.num_drones)
    for m in range(config.num_drones):
        if state.malfunctioned[m]:
            continue
        mine = serving == m
        n = int(np.count_nonzero(mine))
        if n:
            out[m] = config.w_support * n / config.num_users + config.w_qos * float(quality[mine].mean())
    return out


def sector_counts(dx, dy) -> np.ndarray:
    """Membership of offsets in the sectors of ``SECTOR_NAMES``, shape (..., 8).

    N, S, E, W are open half-planes and NE, NW, SW, SE open quadrants, so an
    off-axis user falls in two half-planes and one quadrant while a user
    straight north falls in N only. The order puts the half-plane of each
    movement action on that action's qubit wire for the default two-drone
    observation (feature 4 + k lands on wire (4 + k) mod 5).
    """
    dx, dy = np.asarray(dx, dtype=float), np.asarray(dy, dtype=float)
    n, s, e, w = dy > 0, dy < 0, dx > 0, dx < 0
    member = {"N": n, "S": s, "E": e, "W": w, "NE": n & e, "NW": n & w, "SW": s & w, "SE": s & e}
    return np.stack([member[k] for k in SECTOR_NAMES], axis=-1).astype(float)


def observe(state: EnvState, agent_id: int, config: EnvConfig) -> np.ndarray:
    if not 0 <= agent_id < config.num_drones:
        raise InvalidArgumentError(f"agent id {agent_id} out of range")
    own = state.drone_positions[agent_id]
    others = [state.drone_positions[j] for j in range(config.num_drones) if j != agent_id]
    serving, _ = _assignment(state, config)
    offsets = state.user_positions[serving < 0] - own
    counts = sector_counts(offsets[:, 0], offsets[:, 1]).sum(axis=0)
    return np.concatenate([own, *others, counts]) if others else np.concatenate([own, counts])


def observe_all(state: EnvState, config: EnvConfig) -> list[np.ndarray]:
    return [observe(state, m, config) for m in range(config.num_drones)]


def reset(config: EnvConfig, seed: int | np.random.Generator) -> tuple[EnvState, list[np.ndarray]]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    m = config.num_drones
    xs = config.grid_width * (np.arange(m) + 1) / (m + 1)
    drones = np.stack([xs, np.zeros(m)], axis=1)
    # nudge the low end off zero so users sit strictly inside the grid
    tiny = np.nextafter(0.0, 1.0)
    users = np.stack(
        [
            rng.uniform(tiny, config.grid_width, config.num_users),
            rng.uniform(tiny, config.grid_height, config.num_users),
        ],
        axis=1,
    )
    state = EnvState(drones, users, np.zeros(m, dtype=bool), 0)
    return state, observe_all(state, config)


def step(
    state: EnvState, joint_action: Sequence[int], config: EnvConfig
) -> tuple[EnvState, list[np.ndarray], np.ndarray, StepMetrics]:
    if state.t >= config.steps_per_episode:
        raise EpisodeFinishedError(f"episode finished at t={state.t}")
    actions = np.asarray(joint_action, dtype=int)
    if actions.shape != (config.num_drones,):
        raise InvalidArgumentError(f"expected {config.num_drones} actions, got {len(actions)}")
    if np.any((actions < 0) | (actions >= NUM_ACTIONS)):
        raise InvalidArgumentError(f"action indices must be in [0, {NUM_ACTIONS}), got {actions.tolist()}")

    nxt = state.copy()
    moves = MOVES[actions]
    moves[nxt.malfunctioned] = 0.0
    nxt.drone_positions = nxt.drone_positions + moves
    np.clip(nxt.drone_positions[:, 0], 0.0, config.grid_width, out=nxt.drone_positions[:, 0])
    np.clip(nxt.drone_positions[:, 1], 0.0, config.grid_height, out=nxt.drone_positions[:, 1])
    nxt.t = state.t + 1
    for t, drone in config.malfunction_schedule:
        if t == nxt.t:
            nxt.malfunctioned[drone] = True

    serving, _ = _assignment(nxt, config)
    metrics = StepMetrics(support_rate(nxt, config), qos(nxt, config), serving >= 0)
    return nxt, observe_all(nxt, config), reward(nxt, config), metrics


def frame(state: EnvState, config: EnvConfig, rewards: Sequence[float] | None = None) -> dict:
    """Trajectory frame record for one timestep."""
    serving, _ = _assignment(state, config)
    return {
        "t": state.t,
        "drone_positions": state.drone_positions.tolist(),
        "malfunctioned": state.malfunctioned.tolist(),
        "user_positions": state.user_positions.tolist(),
        "covered": (serving >= 0).tolist(),
        "serving_drone": serving.tolist(),
        "support_rate": support_rate(state, config),
        "qos": qos(state, config),
        "rewards": [float(r) for r in (rewards if rewards is not None else reward(state, config))],
    }
