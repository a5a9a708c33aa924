"""Spatial pooler encoder with a newborn stage, plus a linear decoder.

The pooler maps binary images to fixed-sparsity SDRs. Weights of every
neuron are nonnegative, live only on its receptive field and always sum to
one. During the newborn stage homeostatic boosting is on and the receptive
fields are pruned down to a small target size; afterwards boosting is
switched off for good.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .sdr import Sdr, block_kwta, kwta


class Stage(str, Enum):
    NEWBORN = "newborn"
    ADULT = "adult"


@dataclass
class SpatialPoolerConfig:
    input_dim: int
    num_neurons: int
    k: int
    blocks: int = 1
    learning_rate: float = 0.01
    connectivity: float = 0.2
    target_rf_size: int | None = None
    newborn_steps: int = 1000
    boost_strength: float = 3.0
    activity_horizon: int = 1000


class SpatialPooler:
    """Online k-WTA clustering encoder.

    With ``blocks > 1`` the neurons are split into equal contiguous blocks and
    ``k // blocks`` winners are picked inside each block, so every block
    contributes the same number of active bits.
    """

    def __init__(self, config: SpatialPoolerConfig, rng: np.random.Generator):
        c = config
        if c.input_dim <= 0 or c.num_neurons <= 0:
            raise ValueError("input_dim and num_neurons must be positive")
        if c.num_neurons % c.blocks or c.k % c.blocks:
            raise ValueError("num_neurons and k must be divisible by blocks")
        if not 0.0 < c.connectivity <= 1.0:
            raise ValueError("connectivity must be in (0, 1]")
        self.config = c
        self.input_dim = c.input_dim
        self.num_neurons = c.num_neurons
        self.k = c.k
        self.blocks = c.blocks
        self.learning_rate = c.learning_rate

        n_conn = max(1, int(round(c.connectivity * c.input_dim)))
        self.initial_rf_size = n_conn
        self.target_rf_size = n_conn if c.target_rf_size is None else min(c.target_rf_size, n_conn)
        self.rf = np.zeros((c.num_neurons, c.input_dim), dtype=bool)
        for i in range(c.num_neurons):
            self.rf[i, rng.choice(c.input_dim, size=n_conn, replace=False)] = True
        w = np.where(self.rf, rng.uniform(0.5, 1.0, size=self.rf.shape), 0.0)
        self.weights = w / w.sum(axis=1, keepdims=True)

        self.target_rate = c.k / c.num_neurons
        self.activity = np.full(c.num_neurons, self.target_rate)
        self.boost_scale = float(c.boost_strength)
        self.newborn_steps = int(c.newborn_steps)
        self.newborn_steps_remaining = self.newborn_steps
        self.stage = Stage.NEWBORN if self.newborn_steps > 0 else Stage.ADULT
        if self.stage is Stage.ADULT:
            self.boost_scale = 0.0
            self._prune_to(self.target_rf_size)

    @property
    def boost(self) -> np.ndarray:
        if self.boost_scale == 0.0:
            return np.ones(self.num_neurons)
        return np.exp(self.boost_scale * (self.target_rate - self.activity))

    def overlaps(self, obs) -> np.ndarray:
        obs = self._check(obs)
        return self.boost * (self.weights @ obs)

    def encode(self, obs) -> Sdr:
        scores = self.overlaps(obs)
        if self.blocks == 1:
            return kwta(scores, self.k)
        return block_kwta(scores, self.k // self.blocks, self.blocks)

    def learn(self, obs, z: Sdr) -> None:
        """Hebbian step for the winners in ``z``; rows stay normalized."""
        obs = self._check(obs)
        if z.dimension != self.num_neurons:
            raise ValueError("SDR dimension does not match the pooler")
        if self.learning_rate != 0.0:
            for i in z.active:
                hit = self.rf[i] & (obs > 0)
                total = hit.sum()
                if total == 0:
                    continue
                row = self.weights[i] + self.learning_rate * hit / total
                self.weights[i] = row / row.sum()
        on = np.zeros(self.num_neurons)
        on[z.active] = 1.0
        self.activity += (on - self.activity) / self.config.activity_horizon

    def newborn_step(self) -> None:
        """Anneal boosting and advance pruning by one step; no-op once adult."""
        if self.stage is Stage.ADULT:
            return
        self.newborn_steps_remaining -= 1
        progress = 1.0 - self.newborn_steps_remaining / self.newborn_steps
        self.boost_scale = self.config.boost_strength * (1.0 - progress)
        size = int(round(self.initial_rf_size + (self.target_rf_size - self.initial_rf_size) * progress))
        self._prune_to(size)
        if self.newborn_steps_remaining <= 0:
            self.stage = Stage.ADULT
            self.boost_scale = 0.0
            self._prune_to(self.target_rf_size)

    def _prune_to(self, size: int) -> None:
        counts = self.rf.sum(axis=1)
        for i in np.flatnonzero(counts > size):
            # weakest connections go first; ties resolved by input index
            conn = np.flatnonzero(self.rf[i])
            order = np.argsort(-self.weights[i, conn], kind="stable")
            drop = conn[order[size:]]
            self.rf[i, drop] = False
            self.weights[i, drop] = 0.0
            self.weights[i] /= self.weights[i].sum()

    def _check(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64).ravel()
        if obs.size != self.input_dim:
            raise ValueError(f"expected {self.input_dim} inputs, got {obs.size}")
        return obs

    def state_dict(self) -> dict:
        return {
            "weights": self.weights, "rf": self.rf, "activity": self.activity,
            "boost_scale": self.boost_scale, "stage": self.stage.value,
            "newborn_steps_remaining": self.newborn_steps_remaining,
        }

    def load_state_dict(self, state: dict) -> None:
        self.weights = np.array(state["weights"], dtype=np.float64)
        self.rf = np.array(state["rf"], dtype=bool)
        self.activity = np.array(state["activity"], dtype=np.float64)
        self.boost_scale = float(state["boost_scale"])
        self.stage = Stage(state["stage"])
        self.newborn_steps_remaining = int(state["newborn_steps_remaining"])


class LinearDecoder:
    """Linear reconstruction of the input from an SDR, trained by MSE steps."""

    def __init__(self, sdr_dim: int, output_dim: int, learning_rate: float = 0.1):
        self.weights = np.zeros((sdr_dim, output_dim))
        self.learning_rate = learning_rate

    def decode(self, z: Sdr) -> np.ndarray:
        if z.dimension != self.weights.shape[0]:
            raise ValueError("SDR dimension does not match the decoder")
        return self.weights[z.active].sum(axis=0)

    def learn(self, z: Sdr, obs) -> None:
        obs = np.asarray(obs, dtype=np.float64).ravel()
        if obs.size != self.weights.shape[1]:
            raise ValueError("observation size does not match the decoder")
        err = self.decode(z) - obs
        # d/dW of 0.5*|err|^2 is err for every active row
        self.weights[z.active] -= self.learning_rate * err
