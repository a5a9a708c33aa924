"""Experiment configuration: nested dataclasses loaded from JSON with dotted overrides."""
from __future__ import annotations

import dataclasses
import json
from enum import Enum
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..agent import Agent, AgentConfig
from ..encoder import SpatialPooler, SpatialPoolerConfig
from ..env import Pinball, PinballConfig
from ..tm import Memory, Topology


class ConfigError(ValueError):
    pass


@dataclass
class EncoderSettings:
    learning_rate: float = 0.02
    connectivity: float = 0.2
    target_rf_size: int = 24
    newborn_steps: int = 1500
    boost_strength: float = 3.0
    activity_horizon: int = 1000


@dataclass
class MemorySettings:
    n_vars: int = 4
    n_obs_states: int = 16
    cells_per_column: int = 4
    context_field_size: int | None = None
    lr_factor: float = 0.1
    lr_weight: float = 0.1
    max_segments_per_cell: int = 64


@dataclass
class ExperimentConfig:
    env: PinballConfig = field(default_factory=PinballConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    memory: MemorySettings = field(default_factory=MemorySettings)
    episodes: int = 500
    max_steps: int | None = None
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    switch_episode: int | None = None
    out_dir: str = "runs"
    plot: bool = False
    timing: bool = False
    export_frames: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.switch_episode is not None and self.switch_episode < 1:
            raise ConfigError("switch_episode must be >= 1")

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_overrides(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        """Copy with dotted-key overrides applied, e.g. ``{"agent.horizon": 1}``."""
        data = self.to_dict()
        for key, value in overrides.items():
            node = data
            *path, leaf = key.split(".")
            for part in path:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(f"unknown config section {key!r}")
                node = node[part]
            if leaf not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[leaf] = value
        return self.from_dict(data)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, Enum):
        return x.value
    return x


def _build(cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    nested = {"env": PinballConfig, "agent": AgentConfig, "encoder": EncoderSettings, "memory": MemorySettings}
    for name, value in data.items():
        if cls is ExperimentConfig and name in nested:
            value = _build(nested[name], value)
        elif cls is PinballConfig and name in ("resolution", "start", "start_velocity"):
            value = tuple(value)
        elif cls is PinballConfig and name == "fields":
            value = tuple(dict(f) for f in value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per component derived from one trial seed."""
    names = ("env", "encoder", "memory", "policy")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def build_trial(config: ExperimentConfig, seed: int) -> tuple[Pinball, Agent]:
    rngs = seed_streams(seed)
    env = Pinball(config.env, rngs["env"])
    ms, es = config.memory, config.encoder
    cols, rows = config.env.resolution
    sp = SpatialPooler(SpatialPoolerConfig(
        input_dim=cols * rows, num_neurons=ms.n_vars * ms.n_obs_states, k=ms.n_vars, blocks=ms.n_vars,
        learning_rate=es.learning_rate, connectivity=es.connectivity, target_rf_size=es.target_rf_size,
        newborn_steps=es.newborn_steps, boost_strength=es.boost_strength,
        activity_horizon=es.activity_horizon), rngs["encoder"])
    topology = Topology(ms.n_vars, ms.n_obs_states, ms.cells_per_column, ms.context_field_size,
                        n_actions=config.env.n_actions + 1)
    memory = Memory(topology, lr_factor=ms.lr_factor, lr_weight=ms.lr_weight,
                    max_segments_per_cell=ms.max_segments_per_cell, seed=rngs["memory"])
    return env, Agent(config.agent, sp, memory, rngs["policy"])
