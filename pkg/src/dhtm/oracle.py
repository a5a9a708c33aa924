"""Exact reference computations on small dense models.

These are test instruments: a dense HMM forward filter and closed-form
successor representations. Nothing here is tuned for speed.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ROW_TOL = 1e-12
FALLBACK_SERIES_LENGTH = 10_000


class ZeroLikelihoodError(ArithmeticError):
    """The observation sequence has zero probability under the model."""


@dataclass
class DenseHmm:
    """Dense HMM, optionally with one transition matrix per action.

    Attributes:
        transition: ``(n_actions, S, S)`` row-stochastic matrices.
        emission: ``(S, O)`` row-stochastic matrix.
        initial: ``(S,)`` distribution of the first hidden state.
    """

    transition: np.ndarray
    emission: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        if self.transition.ndim == 2:
            self.transition = self.transition[None]
        self.emission = np.asarray(self.emission, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        s = self.n_states
        if self.transition.shape[1:] != (s, s) or self.emission.shape[0] != s or self.initial.shape != (s,):
            raise ValueError("inconsistent HMM dimensions")
        for name, rows in (("transition", self.transition.reshape(-1, s)), ("emission", self.emission),
                           ("initial", self.initial[None])):
            if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > ROW_TOL * 10 * rows.shape[1]):
                raise ValueError(f"{name} rows must be nonnegative and sum to 1")

    @property
    def n_states(self) -> int:
        return self.emission.shape[0]

    @property
    def n_obs(self) -> int:
        return self.emission.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[0]


def _actions(hmm: DenseHmm, n: int, actions) -> np.ndarray:
    if actions is None:
        return np.zeros(n, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    if actions.shape != (n,):
        raise ValueError("need one action per observation (the first is ignored)")
    return actions


def forward_filter(hmm: DenseHmm, observations: Sequence[int], actions=None) -> list[np.ndarray]:
    """Filtered posteriors p(h_t | o_1..o_t), renormalized every step.

    ``actions[t]`` is the action executed between steps ``t-1`` and ``t``.
    """
    return _forward(hmm, observations, actions)[1]


def forward_predictive(hmm: DenseHmm, observations: Sequence[int], actions=None) -> list[np.ndarray]:
    """One-step predictive distributions p(h_t | o_1..o_{t-1}); the first is the initial distribution."""
    return _forward(hmm, observations, actions)[0]


def _forward(hmm, observations, actions):
    obs = np.asarray(observations, dtype=np.int64)
    if obs.size and (obs.min() < 0 or obs.max() >= hmm.n_obs):
        raise ValueError("observation out of range")
    acts = _actions(hmm, obs.size, actions)
    priors, posts = [], []
    prior = hmm.initial
    for t, o in enumerate(obs):
        if t:
            prior = posts[-1] @ hmm.transition[acts[t]]
        joint = prior * hmm.emission[:, o]
        z = joint.sum()
        if z <= 0.0:
            raise ZeroLikelihoodError(f"zero likelihood at step {t}")
        priors.append(prior)
        posts.append(joint / z)
    return priors, posts


def sequence_likelihood_bruteforce(hmm: DenseHmm, observations: Sequence[int], actions=None) -> np.ndarray:
    """Unnormalized p(h_T = s, o_1..o_T) by summing over every hidden path."""
    import itertools

    obs = list(observations)
    acts = _actions(hmm, len(obs), actions)
    out = np.zeros(hmm.n_states)
    for path in itertools.product(range(hmm.n_states), repeat=len(obs)):
        p = hmm.initial[path[0]] * hmm.emission[path[0], obs[0]]
        for t in range(1, len(obs)):
            p *= hmm.transition[acts[t], path[t - 1], path[t]] * hmm.emission[path[t], obs[t]]
        out[path[-1]] += p
    return out


def sr_closed_form(transition, emission, gamma: float, horizon: int | None = None) -> np.ndarray:
    """Successor representation sum_l gamma^l P^l D.

    With ``horizon=None`` the infinite sum is obtained from a linear solve;
    if the system is singular it falls back to ``FALLBACK_SERIES_LENGTH``
    terms of the series.
    """
    P = np.asarray(transition, dtype=np.float64)
    D = np.asarray(emission, dtype=np.float64)
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must be in [0, 1)")
    if P.ndim != 2 or P.shape[0] != P.shape[1] or D.shape[0] != P.shape[0]:
        raise ValueError("shape mismatch")
    if horizon is None:
        try:
            return np.linalg.solve(np.eye(P.shape[0]) - gamma * P, D)
        except np.linalg.LinAlgError:
            horizon = FALLBACK_SERIES_LENGTH
    M = np.zeros_like(D)
    term = D.copy()
    for _ in range(horizon + 1):
        M += term
        term = gamma * (P @ term)
    return M


def dumps_hmm(hmm: DenseHmm) -> str:
    """Small text format: a header line with dimensions, then row-major matrices."""
    buf = io.StringIO()
    buf.write(f"hmm {hmm.n_states} {hmm.n_obs} {hmm.n_actions}\n")
    np.savetxt(buf, hmm.initial[None], fmt="%.17g")
    for a in range(hmm.n_actions):
        np.savetxt(buf, hmm.transition[a], fmt="%.17g")
    np.savetxt(buf, hmm.emission, fmt="%.17g")
    return buf.getvalue()


def loads_hmm(text: str) -> DenseHmm:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    head = lines[0].split()
    if head[0] != "hmm" or len(head) != 4:
        raise ValueError("expected header 'hmm <states> <observations> <actions>'")
    s, o, a = (int(x) for x in head[1:])
    rows = [np.array(ln.split(), dtype=np.float64) for ln in lines[1:]]
    if len(rows) != 1 + a * s + s:
        raise ValueError("wrong number of matrix rows")
    initial = rows[0]
    trans = np.array(rows[1: 1 + a * s]).reshape(a, s, s)
    emission = np.array(rows[1 + a * s:]).reshape(s, o)
    return DenseHmm(trans, emission, initial)
