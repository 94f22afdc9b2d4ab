"""Experiment configuration files.

The format is INI with three sections, ``[env]``, ``[policy]`` and
``[train]``, one ``key = value`` per line. Every key is optional; missing keys
take the defaults of the desk-scale setup and unknown keys are rejected.
Malfunction schedules are comma-separated ``timestep:drone`` pairs, e.g.
``eval_malfunction_schedule = 20:1``; an empty value means no malfunctions.

The observation size and feature bounds of the policy are derived from the
``[env]`` section, so they are not configurable.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

from .baseline import MlpConfig
from .env import NUM_ACTIONS, EnvConfig
from .errors import ConfigError
from .qpolicy import QPolicyConfig
from .training import TrainConfig

PolicyKind = Literal["quantum", "classical"]

QUANTUM_KEYS = ("num_qubits", "num_blocks", "layers_per_block", "value_scale")
CLASSICAL_KEYS = ("hidden_size",)


@dataclass(frozen=True)
class PolicySettings:
    """The ``[policy]`` section; covers both policy kinds."""

    num_qubits: int = NUM_ACTIONS
    num_blocks: int = 2
    layers_per_block: int = 1
    value_scale: float = 10.0
    hidden_size: int = 64


@dataclass(frozen=True)
class ConfigBundle:
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicySettings = field(default_factory=PolicySettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    summary_window: int = 20

    def quantum_config(self) -> QPolicyConfig:
        p = self.policy
        return QPolicyConfig(
            obs_dim=self.env.obs_dim,
            feature_bounds=self.env.feature_bounds(),
            num_qubits=p.num_qubits,
            num_blocks=p.num_blocks,
            layers_per_block=p.layers_per_block,
            value_scale=p.value_scale,
        )

    def classical_config(self) -> MlpConfig:
        return MlpConfig(
            obs_dim=self.env.obs_dim,
            feature_bounds=self.env.feature_bounds(),
            hidden_size=self.policy.hidden_size,
            num_actions=NUM_ACTIONS,
            value_scale=self.policy.value_scale,
        )

    def policy_config(self, kind: PolicyKind) -> QPolicyConfig | MlpConfig:
        if kind == "quantum":
            return self.quantum_config()
        if kind == "classical":
            return self.classical_config()
        raise ConfigError(f"unknown policy kind {kind!r}", key="policy")


_SECTIONS = {"env": EnvConfig, "policy": PolicySettings, "train": TrainConfig}
# keys stored on the bundle itself but written under [train]
_BUNDLE_TRAIN_KEYS = ("summary_window",)


def _parse_schedule(text: str, key: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            t, drone = item.split(":")
            out.append((int(t), int(drone)))
        except ValueError:
            raise ConfigError(f"expected 'timestep:drone' pairs, got {item!r}", key=key) from None
    return tuple(out)


def _format_schedule(schedule) -> str:
    return ", ".join(f"{t}:{d}" for t, d in schedule)


def _parse_value(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return _parse_schedule(raw, key)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {type(default).__name__}", key=key) from None
    raise ConfigError(f"unsupported value type {type(default).__name__}", key=key)


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return _format_schedule(value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_config(text: str) -> ConfigBundle:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep key case so typos are not silently folded
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc.message if hasattr(exc, 'message') else exc}") from None

    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    bundle_values: dict = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError("unknown section", key=section)
        cls = _SECTIONS[section]
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        for key, raw in parser.items(section):
            path = f"{section}.{key}"
            if section == "train" and key in _BUNDLE_TRAIN_KEYS:
                bundle_values[key] = _parse_value(raw, getattr(ConfigBundle, key), path)
                continue
            if key not in defaults:
                raise ConfigError("unknown key", key=path)
            values[section][key] = _parse_value(raw, defaults[key], path)

    bundle = ConfigBundle(
        env=EnvConfig(**values["env"]),
        policy=PolicySettings(**values["policy"]),
        train=TrainConfig(**values["train"]),
        **bundle_values,
    )
    if bundle.summary_window < 1:
        raise ConfigError("summary_window must be >= 1", key="train.summary_window")
    # builds and validates the quantum policy even for classical runs, so a
    # bad qubit count is reported whichever policy is trained
    bundle.quantum_config()
    bundle.classical_config()
    return bundle


def load_bundle(path: str | Path) -> ConfigBundle:
    return parse_config(Path(path).read_text())


def load_config(
    path: str | Path, policy_kind: PolicyKind = "quantum"
) -> tuple[EnvConfig, QPolicyConfig | MlpConfig, TrainConfig]:
    bundle = load_bundle(path)
    return bundle.env, bundle.policy_config(policy_kind), bundle.train


def dump_config(bundle: ConfigBundle) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name, obj in (("env", bundle.env), ("policy", bundle.policy), ("train", bundle.train)):
        parser[name] = {f.name: _format_value(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    for key in _BUNDLE_TRAIN_KEYS:
        parser["train"][key] = _format_value(getattr(bundle, key))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
