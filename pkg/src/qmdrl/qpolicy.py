"""Data re-uploading Q-policy circuit.

Each repetition uploads one chunk of ``q`` scaled features with RY gates, then
applies a trainable RZ per wire. After all repetitions come ``B`` blocks of
``L`` CU3 rings (control ``w``, target ``(w + 1) % q``). Pauli-Z expectations
of all wires are the observables; ``value_scale`` times them are the Q-values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from . import qsim
from .errors import ConfigError, InvalidArgumentError

PAD = -1
NUM_ACTIONS = 5


@dataclass(frozen=True)
class QPolicyConfig:
    obs_dim: int
    feature_bounds: tuple[tuple[float, float], ...]
    num_qubits: int = NUM_ACTIONS
    num_blocks: int = 2
    layers_per_block: int = 1
    value_scale: float = 10.0
    num_actions: int = NUM_ACTIONS

    def __post_init__(self):
        if self.num_qubits != self.num_actions:
            raise ConfigError(
                f"num_qubits must equal the number of actions ({self.num_actions}), "
                f"got {self.num_qubits}",
                key="policy.num_qubits",
            )
        if self.obs_dim < 1:
            raise ConfigError("obs_dim must be positive", key="policy.obs_dim")
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1", key="policy.num_blocks")
        if self.layers_per_block < 1:
            raise ConfigError("layers_per_block must be >= 1", key="policy.layers_per_block")
        if not self.value_scale > 0:
            raise ConfigError("value_scale must be positive", key="policy.value_scale")
        if len(self.feature_bounds) != self.obs_dim:
            raise ConfigError(
                f"{len(self.feature_bounds)} feature bounds for obs_dim {self.obs_dim}",
                key="policy.feature_bounds",
            )
        for i, (lo, hi) in enumerate(self.feature_bounds):
            if not lo < hi:
                raise ConfigError(f"feature {i} has min {lo} >= max {hi}", key="policy.feature_bounds")

    @property
    def repetitions(self) -> int:
        return -(-self.obs_dim // self.num_qubits)


@dataclass(frozen=True)
class EncodingPlan:
    repetitions: int
    chunks: tuple[tuple[int, ...], ...]


@dataclass
class QPolicyParams:
    encoder_angles: np.ndarray  # (N_rep, q)
    block_angles: np.ndarray  # (B, L, q, 3)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.encoder_angles.ravel(), self.block_angles.ravel()])

    @classmethod
    def unflatten(cls, config: QPolicyConfig, flat: Sequence[float]) -> "QPolicyParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (param_count(config),):
            raise InvalidArgumentError(
                f"expected {param_count(config)} parameters, got shape {flat.shape}"
            )
        n_enc = config.repetitions * config.num_qubits
        return cls(
            flat[:n_enc].reshape(config.repetitions, config.num_qubits).copy(),
            flat[n_enc:]
            .reshape(config.num_blocks, config.layers_per_block, config.num_qubits, 3)
            .copy(),
        )

    @classmethod
    def zeros(cls, config: QPolicyConfig) -> "QPolicyParams":
        return cls.unflatten(config, np.zeros(param_count(config)))


def param_count(config: QPolicyConfig) -> int:
    q = config.num_qubits
    return config.repetitions * q + 3 * config.num_blocks * config.layers_per_block * q


def build_encoding_plan(obs_dim: int, num_qubits: int) -> EncodingPlan:
    if obs_dim < 1 or num_qubits < 1:
        raise InvalidArgumentError(
            f"obs_dim and num_qubits must be positive, got {obs_dim}, {num_qubits}"
        )
    reps = -(-obs_dim // num_qubits)
    chunks = tuple(
        tuple(j * num_qubits + w if j * num_qubits + w < obs_dim else PAD for w in range(num_qubits))
        for j in range(reps)
    )
    return EncodingPlan(reps, chunks)


def scale_features(obs: Sequence[float], bounds: Sequence[tuple[float, float]]) -> np.ndarray:
    """Map each feature affinely from its ``(min, max)`` onto ``[-pi, pi]``, clamping first."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (len(bounds),):
        raise InvalidArgumentError(f"{obs.shape[0] if obs.ndim else 0} features for {len(bounds)} bounds")
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    if np.any(lo >= hi):
        raise ConfigError("feature bounds need min < max", key="policy.feature_bounds")
    frac = (np.clip(obs, lo, hi) - lo) / (hi - lo)
    return -math.pi + 2 * math.pi * frac


def _chunk_angles(config: QPolicyConfig, obs: Sequence[float]) -> np.ndarray:
    """Data angle per (repetition, wire); PAD slots get 0."""
    angles = scale_features(obs, config.feature_bounds)
    q = config.num_qubits
    padded = np.zeros(config.repetitions * q)
    padded[: config.obs_dim] = angles
    return padded.reshape(config.repetitions, q)


def _gates(config: QPolicyConfig, data: np.ndarray, enc: np.ndarray, blocks: np.ndarray) -> list:
    """Gate list; ``enc`` and ``blocks`` carry an optional trailing batch axis."""
    q = config.num_qubits
    gates: list[qsim.Gate] = []
    for j in range(config.repetitions):
        for w in range(q):
            gates.append(qsim.RY(w, float(data[j, w])))
        for w in range(q):
            gates.append(qsim.RZ(w, enc[j, w]))
    # a one-wire ring would control the wire on itself; the block angles
    # still exist so the parameter layout is the same for every q
    if q == 1:
        return gates
    for b in range(config.num_blocks):
        for l in range(config.layers_per_block):
            for w in range(q):
                theta, phi, lam = blocks[b, l, w]
                gates.append(qsim.CU3(w, (w + 1) % q, theta, phi, lam))
    return gates


def _check_obs(config: QPolicyConfig, obs) -> None:
    if len(obs) != config.obs_dim:
        raise InvalidArgumentError(f"observation length {len(obs)} != obs_dim {config.obs_dim}")


def build_policy_circuit(config: QPolicyConfig, params: QPolicyParams, obs: Sequence[float]) -> list:
    _check_obs(config, obs)
    q = config.num_qubits
    if params.encoder_angles.shape != (config.repetitions, q) or params.block_angles.shape != (
        config.num_blocks,
        config.layers_per_block,
        q,
        3,
    ):
        raise InvalidArgumentError("parameter shapes do not match the policy config")
    return _gates(
        config,
        _chunk_angles(config, obs),
        params.encoder_angles.astype(float),
        params.block_angles.astype(float),
    )


def forward(config: QPolicyConfig, params: QPolicyParams, obs: Sequence[float]) -> np.ndarray:
    circuit = build_policy_circuit(config, params, obs)
    state = qsim.apply_circuit(qsim.new_zero_state(config.num_qubits), circuit)
    return qsim.expectation_z_all(state)


def forward_batch(config: QPolicyConfig, flat_params: np.ndarray, obs: Sequence[float]) -> np.ndarray:
    """Observables for each row of ``flat_params`` (shape ``(n, P)``) on one observation."""
    _check_obs(config, obs)
    flat_params = np.atleast_2d(np.asarray(flat_params, dtype=float))
    n, p = flat_params.shape
    if p != param_count(config):
        raise InvalidArgumentError(f"expected {param_count(config)} parameters per row, got {p}")
    q = config.num_qubits
    n_enc = config.repetitions * q
    # batch axis last so that enc[j, w] is a length-n angle array
    enc = flat_params[:, :n_enc].T.reshape(config.repetitions, q, n)
    blocks = flat_params[:, n_enc:].T.reshape(config.num_blocks, config.layers_per_block, q, 3, n)
    amps = qsim.simulate_batch(q, _gates(config, _chunk_angles(config, obs), enc, blocks), n)
    return qsim.z_expectations(amps, q)


def q_values(config: QPolicyConfig, params: QPolicyParams, obs: Sequence[float]) -> np.ndarray:
    return config.value_scale * forward(config, params, obs)


def action_distribution(observables: Sequence[float], temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise InvalidArgumentError(f"temperature must be positive, got {temperature}")
    z = np.asarray(observables, dtype=float) / temperature
    e = np.exp(z - z.max())
    return e / e.sum()


def select_action(
    distribution: Sequence[float],
    mode: Literal["greedy", "sample"],
    rng: np.random.Generator | None = None,
) -> int:
    p = np.asarray(distribution, dtype=float)
    if p.size == 0:
        raise InvalidArgumentError("empty action distribution")
    if abs(p.sum() - 1.0) > 1e-6 or np.any(p < 0):
        raise InvalidArgumentError(f"action distribution is not normalized (sum {p.sum()})")
    if mode == "greedy":
        return int(np.argmax(p))
    if mode == "sample":
        if rng is None:
            raise InvalidArgumentError("sample mode needs a random generator")
        return int(rng.choice(p.size, p=p / p.sum()))
    raise InvalidArgumentError(f"unknown selection mode {mode!r}")
