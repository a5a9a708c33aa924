"""Successor representation over hidden cells, n-step TD learning and surprise."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SURPRISE_FLOOR = 1e-6


@dataclass
class SrMatrix:
    """SR weights, one row per flat hidden cell and one column per observation state.

    Columns are laid out variable-major: ``var * n_obs_states + state``.
    """

    n_cells: int
    n_obs: int
    gamma: float = 0.99
    horizon: int = 5
    learning_rate: float = 0.1
    M: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.M is None:
            self.M = np.zeros((self.n_cells, self.n_obs))
        else:
            self.M = np.asarray(self.M, dtype=np.float64)
            if self.M.shape != (self.n_cells, self.n_obs):
                raise ValueError("M has the wrong shape")

    def sr_of_belief(self, belief) -> np.ndarray:
        b = np.asarray(belief, dtype=np.float64).ravel()
        if b.size != self.n_cells:
            raise ValueError(f"belief has {b.size} cells, SR expects {self.n_cells}")
        return b @ self.M

    def value(self, belief, rewards) -> float:
        r = np.asarray(rewards, dtype=np.float64).ravel()
        if r.size != self.n_obs:
            raise ValueError("reward vector does not match the observation states")
        return float(self.sr_of_belief(belief) @ r)

    def td_target(self, predicted_obs: Sequence, final_belief) -> np.ndarray:
        """Discounted sum of the predicted observations plus the bootstrapped tail.

        ``final_belief=None`` marks an episode that ends within the horizon:
        the sum then stops at the last given prediction and nothing is
        bootstrapped.
        """
        if final_belief is None:
            if not 1 <= len(predicted_obs) <= self.horizon + 1:
                raise ValueError(f"need 1..{self.horizon + 1} predicted distributions")
        elif len(predicted_obs) != self.horizon + 1:
            raise ValueError(f"need {self.horizon + 1} predicted distributions, got {len(predicted_obs)}")
        target = np.zeros(self.n_obs)
        disc = 1.0
        for p in predicted_obs:
            target += disc * np.asarray(p, dtype=np.float64).ravel()
            disc *= self.gamma
        if final_belief is None:
            return target
        return target + disc * self.sr_of_belief(final_belief)

    def td_update(self, belief, predicted_obs: Sequence, final_belief) -> np.ndarray:
        """One belief-weighted TD step; returns the TD error vector."""
        b = np.asarray(belief, dtype=np.float64).ravel()
        delta = self.td_target(predicted_obs, final_belief) - self.sr_of_belief(b)
        if self.learning_rate:
            nz = np.flatnonzero(b)
            self.M[nz] += self.learning_rate * np.outer(b[nz], delta)
        return delta

    def normalized_readout(self, belief, n_vars: int) -> np.ndarray:
        """SR of a belief as a probability vector per variable, shape ``(n_vars, n_obs_states)``.

        Negative entries are clipped to zero; an all-zero row becomes uniform.
        """
        q = np.maximum(self.sr_of_belief(belief), 0.0).reshape(n_vars, -1)
        tot = q.sum(axis=1, keepdims=True)
        uniform = np.full_like(q, 1.0 / q.shape[1])
        return np.where(tot > 0, q / np.where(tot > 0, tot, 1.0), uniform)

    def surprise(self, belief, observed, n_vars: int, floor: float = SURPRISE_FLOOR) -> np.ndarray:
        return surprise(self.normalized_readout(belief, n_vars), observed, floor)

    def state_dict(self) -> dict:
        return {"M": self.M, "gamma": self.gamma, "horizon": self.horizon, "learning_rate": self.learning_rate}

    def load_state_dict(self, state: dict) -> None:
        self.M = np.asarray(state["M"], dtype=np.float64).copy()
        self.gamma = float(state["gamma"])
        self.horizon = int(state["horizon"])
        self.learning_rate = float(state["learning_rate"])


def surprise(q, observed, floor: float = SURPRISE_FLOOR) -> np.ndarray:
    """Mean negative log-probability of observed states under per-variable distributions.

    Args:
        q: ``(n_vars, n_obs_states)`` normalized SR readout made at time t.
        observed: ``(L, n_vars)`` observed states at offsets 1..L.

    Returns:
        Surprise per offset, shape ``(L,)``.
    """
    q = np.asarray(q, dtype=np.float64)
    obs = np.atleast_2d(np.asarray(observed, dtype=np.int64))
    if obs.shape[1] != q.shape[0]:
        raise ValueError("observed states must have one entry per variable")
    p = q[np.arange(q.shape[0])[None, :], obs]
    return -np.log(np.maximum(p, floor)).mean(axis=1)
