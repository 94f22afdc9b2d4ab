"""Classical comparator: a one-hidden-layer tanh MLP Q-network."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidArgumentError


@dataclass(frozen=True)
class MlpConfig:
    obs_dim: int
    feature_bounds: tuple[tuple[float, float], ...]
    hidden_size: int = 64
    num_actions: int = 5
    value_scale: float = 10.0

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ConfigError("hidden_size must be >= 1", key="policy.hidden_size")
        if self.obs_dim < 1 or self.num_actions < 1:
            raise ConfigError("obs_dim and num_actions must be positive", key="policy.obs_dim")
        if len(self.feature_bounds) != self.obs_dim:
            raise ConfigError("one (min, max) bound per feature", key="policy.feature_bounds")


@dataclass
class MlpParams:
    w1: np.ndarray  # (H, d)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (C, H)
    b2: np.ndarray  # (C,)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def unflatten(cls, d: int, h: int, c: int, flat: Sequence[float]) -> "MlpParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (mlp_param_count(d, h, c),):
            raise InvalidArgumentError(
                f"expected {mlp_param_count(d, h, c)} parameters, got shape {flat.shape}"
            )
        i = 0
        w1 = flat[i : i + h * d].reshape(h, d)
        i += h * d
        b1 = flat[i : i + h]
        i += h
        w2 = flat[i : i + c * h].reshape(c, h)
        i += c * h
        return cls(w1.copy(), b1.copy(), w2.copy(), flat[i:].copy())

    @classmethod
    def init(cls, d: int, h: int, c: int, rng: np.random.Generator) -> "MlpParams":
        """Glorot-uniform hidden layer, small output layer, zero biases."""
        lim = np.sqrt(6.0 / (d + h))
        return cls(
            rng.uniform(-lim, lim, (h, d)),
            np.zeros(h),
            rng.uniform(-0.1, 0.1, (c, h)) / np.sqrt(h),
            np.zeros(c),
        )


def mlp_param_count(d: int, h: int, c: int) -> int:
    if d < 1 or h < 1 or c < 1:
        raise InvalidArgumentError(f"layer sizes must be positive, got d={d}, H={h}, C={c}")
    return (d + 1) * h + (h + 1) * c


def mlp_forward(params: MlpParams, obs: Sequence[float]) -> np.ndarray:
    x = np.asarray(obs, dtype=float)
    if x.shape != (params.w1.shape[1],):
        raise InvalidArgumentError(f"observation shape {x.shape} != ({params.w1.shape[1]},)")
    return params.w2 @ np.tanh(params.w1 @ x + params.b1) + params.b2


def mlp_grad(params: MlpParams, obs: Sequence[float], action: int, target: float) -> np.ndarray:
    """Flattened gradient of ``(q[action] - target)**2``."""
    x = np.asarray(obs, dtype=float)
    hidden = np.tanh(params.w1 @ x + params.b1)
    q = params.w2 @ hidden + params.b2
    err = 2.0 * (q[action] - target)

    g_w2 = np.zeros_like(params.w2)
    g_w2[action] = err * hidden
    g_b2 = np.zeros_like(params.b2)
    g_b2[action] = err
    g_pre = err * params.w2[action] * (1.0 - hidden**2)
    g_w1 = np.outer(g_pre, x)
    return MlpParams(g_w1, g_pre, g_w2, g_b2).flatten()
