"""Distributed Hebbian Temporal Memory.

Hidden state is split into ``n_vars`` independent categorical variables. Each
variable has ``n_obs_states`` columns of ``cells_per_column`` cells, and the
observed state of a variable selects one column (the emission factor is a
column indicator). Transitions are stored sparsely as segments: a segment
belongs to one cell, listens to a small set of presynaptic cells from the
previous step, and carries a factor value ``f`` plus one specificity weight
``w`` per presynaptic cell.

Cell ids are flat: ``var * cells_per_var + column * cells_per_column + i``.
Action cells, when present, follow all hidden cells in the presynaptic
space and are always observed.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .sdr import Sdr

EPS = 1e-12
EPS_MESSAGE = 1e-12
EPS_FLOOR = 1e-12


@dataclass(frozen=True)
class Topology:
    n_vars: int
    n_obs_states: int
    cells_per_column: int = 1
    context_field_size: int | None = None
    n_actions: int = 0

    def __post_init__(self):
        if min(self.n_vars, self.n_obs_states, self.cells_per_column) < 1:
            raise ValueError("topology sizes must be positive")
        if self.n_actions < 0:
            raise ValueError("n_actions must be >= 0")
        if self.context_field_size is not None and self.context_field_size < 1:
            raise ValueError("context_field_size must be positive")

    @property
    def cells_per_var(self) -> int:
        return self.n_obs_states * self.cells_per_column

    @property
    def n_hidden(self) -> int:
        return self.n_vars * self.cells_per_var

    @property
    def n_context(self) -> int:
        return self.n_hidden + self.n_actions

    @property
    def pool_size(self) -> int:
        """Number of previous-step winners: one per variable plus the action."""
        return self.n_vars + (1 if self.n_actions else 0)

    @property
    def field_size(self) -> int:
        n = self.pool_size if self.context_field_size is None else self.context_field_size
        return min(n, self.pool_size)

    def cell_id(self, var: int, column: int, i: int = 0) -> int:
        return var * self.cells_per_var + column * self.cells_per_column + i

    def cell_coords(self, cell: int) -> tuple[int, int, int]:
        var, rest = divmod(cell, self.cells_per_var)
        column, i = divmod(rest, self.cells_per_column)
        return var, column, i

    def action_cell(self, action: int) -> int:
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} out of range [0, {self.n_actions})")
        return self.n_hidden + action


@dataclass
class BeliefState:
    """Per-variable categorical distributions, shape ``(n_vars, cells_per_var)``."""

    probs: np.ndarray

    @classmethod
    def uniform(cls, topology: Topology) -> "BeliefState":
        return cls(np.full((topology.n_vars, topology.cells_per_var), 1.0 / topology.cells_per_var))

    @property
    def flat(self) -> np.ndarray:
        return self.probs.ravel()

    def column_marginals(self, topology: Topology) -> np.ndarray:
        """Observation-state distribution per variable, shape ``(n_vars, n_obs_states)``."""
        return self.probs.reshape(topology.n_vars, topology.n_obs_states, topology.cells_per_column).sum(-1)

    def copy(self) -> "BeliefState":
        return BeliefState(self.probs.copy())


@dataclass
class Segment:
    """Read-only view of one stored segment."""

    id: int
    owner_cell: int
    log_factor: float
    receptive_field: np.ndarray
    weights: np.ndarray


def segment_log_likelihood(receptive_field, weights, messages,
                           eps: float = EPS, eps_m: float = EPS_MESSAGE) -> float:
    """Log-likelihood of a segment under the previous-step messages.

    ``messages`` is indexed by presynaptic cell id. The first term averages
    the presynaptic probabilities weighted by specificity, the second adds
    an independent-product contribution for unspecific synapses.
    """
    rf = np.asarray(receptive_field, dtype=np.int64)
    if rf.size == 0:
        raise RuntimeError("segment has an empty receptive field")
    w = np.asarray(weights, dtype=np.float64)
    m = np.asarray(messages, dtype=np.float64)[rf]
    return float(np.log(np.dot(w, m) + eps)
                 + np.dot(1.0 - w, np.log(np.maximum(m, eps_m)))
                 - np.log(rf.size))


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def observe(topology: Topology, prior: BeliefState, columns, eps: float = EPS) -> BeliefState:
    """Restrict the prior to the observed column of every variable.

    When a column holds less than ``eps`` prior mass the posterior bursts to
    a uniform distribution over that column.
    """
    columns = np.asarray(columns, dtype=np.int64).ravel()
    if columns.size != topology.n_vars:
        raise ValueError(f"need one observed state per variable ({topology.n_vars}), got {columns.size}")
    if np.any((columns < 0) | (columns >= topology.n_obs_states)):
        raise ValueError("observed state out of range")
    cpc = topology.cells_per_column
    p = prior.probs.reshape(topology.n_vars, topology.n_obs_states, cpc)
    rows = np.arange(topology.n_vars)
    inside = p[rows, columns]  # (n_vars, cpc)
    mass = inside.sum(axis=1, keepdims=True)
    burst = mass < eps
    inside = np.where(burst, 1.0 / cpc, inside / np.where(burst, 1.0, mass))
    post = np.zeros_like(p)
    post[rows, columns] = inside
    return BeliefState(post.reshape(prior.probs.shape))


def columns_from_sdr(topology: Topology, z: Sdr) -> np.ndarray:
    """Observed column per variable from an SDR with one active bit per variable block."""
    if z.dimension != topology.n_vars * topology.n_obs_states:
        raise ValueError("SDR dimension does not match n_vars * n_obs_states")
    var, col = np.divmod(z.active, topology.n_obs_states)
    if not np.array_equal(var, np.arange(topology.n_vars)):
        raise ValueError("SDR must have exactly one active bit per variable block")
    return col


class Memory:
    """Segment store, current messages and the predict/observe/learn loop."""

    def __init__(self, topology: Topology, *, lr_factor: float = 0.1, lr_weight: float = 0.1,
                 f_init: float | None = None, w_init: float = 0.5, max_segments_per_cell: int = 64,
                 floor: float = EPS_FLOOR, seed: int | np.random.Generator | None = 0):
        if not 0.0 <= lr_factor <= 1.0 or not 0.0 <= lr_weight <= 1.0:
            raise ValueError("learning rates must be in [0, 1]")
        self.topology = topology
        self.lr_factor = lr_factor
        self.lr_weight = lr_weight
        self.f_init = lr_factor if f_init is None else f_init
        if not 0.0 < self.f_init <= 1.0:
            raise ValueError("initial factor value must be in (0, 1]; set f_init when lr_factor is 0")
        self.w_init = w_init
        self.max_segments_per_cell = max_segments_per_cell
        self.log_floor = float(np.log(floor))
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

        n = topology.field_size
        self._owner = np.zeros(0, dtype=np.int64)
        self._factor = np.zeros(0)
        self._rf = np.zeros((0, n), dtype=np.int64)
        self._w = np.zeros((0, n))
        self._alive = np.zeros(0, dtype=bool)
        self._free: list[int] = []
        self._by_cell: list[set[int]] = [set() for _ in range(topology.n_hidden)]
        self._by_presyn: list[set[int]] = [set() for _ in range(topology.n_context)]

        self._cache = None
        self.messages = BeliefState.uniform(topology)
        self.has_context = False

    # -- segment store -------------------------------------------------

    @property
    def n_segments(self) -> int:
        return int(self._alive.sum())

    def segments_per_var(self) -> np.ndarray:
        owners = self._owner[self._alive]
        return np.bincount(owners // self.topology.cells_per_var, minlength=self.topology.n_vars)

    def segments(self) -> list[Segment]:
        return [self.segment(int(s)) for s in np.flatnonzero(self._alive)]

    def segment(self, sid: int) -> Segment:
        if not (0 <= sid < self._alive.size and self._alive[sid]):
            raise KeyError(sid)
        return Segment(sid, int(self._owner[sid]), float(np.log(self._factor[sid])),
                       self._rf[sid].copy(), self._w[sid].copy())

    def segments_of_cell(self, cell: int) -> list[int]:
        return sorted(self._by_cell[cell])

    def segments_with_presynaptic(self, cell: int) -> list[int]:
        return sorted(self._by_presyn[cell])

    def add_segment(self, owner: int, receptive_field: Sequence[int], factor: float | None = None,
                    weights=None) -> int:
        """Insert a segment, evicting the owner's weakest one if the cell is full."""
        rf = np.asarray(receptive_field, dtype=np.int64)
        order = np.argsort(rf, kind="stable")
        rf = rf[order]
        if rf.size != self.topology.field_size:
            raise ValueError(f"receptive field must have {self.topology.field_size} cells")
        if np.unique(rf).size != rf.size or rf.min() < 0 or rf.max() >= self.topology.n_context:
            raise ValueError("receptive field cells must be distinct presynaptic ids")
        if np.count_nonzero(rf >= self.topology.n_hidden) > 1:
            raise ValueError("receptive field may hold at most one action cell")
        if not 0 <= owner < self.topology.n_hidden:
            raise ValueError("owner must be a hidden cell")
        f = self.f_init if factor is None else factor
        w = np.full(rf.size, self.w_init) if weights is None else np.asarray(weights, dtype=np.float64)[order]

        if len(self._by_cell[owner]) >= self.max_segments_per_cell:
            own = np.fromiter(self._by_cell[owner], dtype=np.int64)
            self._remove(int(own[np.lexsort((own, self._factor[own]))[0]]))
        if self._free:
            sid = self._free.pop()
        else:
            sid = self._grow_storage()
        self._owner[sid] = owner
        self._factor[sid] = f
        self._rf[sid] = rf
        self._w[sid] = w
        self._alive[sid] = True
        self._cache = None
        self._by_cell[owner].add(sid)
        for u in rf:
            self._by_presyn[u].add(sid)
        return sid

    def _grow_storage(self) -> int:
        sid = self._alive.size
        cap = max(64, 2 * sid)
        n = self.topology.field_size

        def grow(a, shape, dtype):
            out = np.zeros(shape, dtype=dtype)
            out[: a.shape[0]] = a
            return out

        self._owner = grow(self._owner, cap, np.int64)
        self._factor = grow(self._factor, cap, np.float64)
        self._rf = grow(self._rf, (cap, n), np.int64)
        self._w = grow(self._w, (cap, n), np.float64)
        self._alive = grow(self._alive, cap, bool)
        self._free = list(range(cap - 1, sid, -1))
        return sid

    def _remove(self, sid: int) -> None:
        self._alive[sid] = False
        self._cache = None
        self._by_cell[int(self._owner[sid])].discard(sid)
        for u in self._rf[sid]:
            self._by_presyn[int(u)].discard(sid)
        self._free.append(sid)

    # -- inference -----------------------------------------------------

    def context_vector(self, messages: BeliefState, action: int | None) -> np.ndarray:
        m = np.zeros(self.topology.n_context)
        m[: self.topology.n_hidden] = messages.flat
        if self.topology.n_actions:
            if action is None:
                raise ValueError("an action is required when the topology has an action variable")
            m[self.topology.action_cell(action)] = 1.0
        return m

    def _compiled(self):
        """Live segments grouped by owner cell; rebuilt after any structural or weight change.

        Each receptive field holds at most one action cell. Its position is
        split out so the hidden part of the likelihood is shared by all actions.
        """
        if self._cache is None:
            top = self.topology
            live = np.flatnonzero(self._alive)
            live = live[np.argsort(self._owner[live], kind="stable")]
            owners = self._owner[live]
            starts = np.flatnonzero(np.r_[True, owners[1:] != owners[:-1]]) if live.size else live
            rf = self._rf[live]
            w = self._w[live]
            is_action = rf >= top.n_hidden
            has_action = is_action.any(axis=1)
            act = np.where(has_action, rf.max(axis=1) - top.n_hidden, -1)
            act_w = np.where(is_action, w, 0.0).sum(axis=1)
            hidden_rf = np.where(is_action, top.n_hidden, rf)  # points at a padding zero
            self._cache = dict(rf=hidden_rf, w=np.where(is_action, 0.0, w), w_off=np.where(is_action, 0.0, 1.0 - w),
                               act=act, act_w=act_w, log_f=np.log(self._factor[live]),
                               log_n=np.log(rf.shape[1]) if live.size else 0.0,
                               cells=owners[starts], starts=starts)
        return self._cache

    def excitation(self, messages: BeliefState, actions: Sequence[int | None]) -> np.ndarray:
        """Per-cell excitation, max over the cell's segments of log f + log L, for each action.

        Returns an array of shape ``(len(actions), n_hidden)``; cells without
        segments get the floor excitation.
        """
        top = self.topology
        if top.n_actions and any(a is None for a in actions):
            raise ValueError("an action is required when the topology has an action variable")
        exc = np.full((len(actions), top.n_hidden), self.log_floor)
        c = self._compiled()
        if not c["cells"].size:
            return exc
        ctx = np.append(messages.flat, 0.0)
        log_ctx = np.log(np.maximum(ctx, EPS_MESSAGE))
        log_ctx[-1] = 0.0
        rf = c["rf"]
        base1 = np.einsum("sn,sn->s", ctx[rf], c["w"])
        base2 = np.einsum("sn,sn->s", log_ctx[rf], c["w_off"])
        act = c["act"]
        a = np.array([-2 if x is None else x for x in actions])[:, None]
        match = act == a
        miss = (act >= 0) & ~match
        s1 = base1 + c["act_w"] * match
        s2 = base2 + (1.0 - c["act_w"]) * np.log(EPS_MESSAGE) * miss
        e = c["log_f"] + np.log(s1 + EPS) + s2 - c["log_n"]
        exc[:, c["cells"]] = np.maximum.reduceat(e, c["starts"], axis=1)
        return exc

    def _priors(self, messages: BeliefState, actions) -> list[BeliefState]:
        top = self.topology
        exc = self.excitation(messages, actions).reshape(-1, top.n_vars, top.cells_per_var)
        return [BeliefState(p) for p in _softmax_rows(exc)]

    def predict(self, action: int | None = None, messages: BeliefState | None = None) -> BeliefState:
        """Prior over the current step given previous messages and the executed action.

        Right after :meth:`reset` there is no context and the prior is uniform.
        """
        if messages is None:
            if not self.has_context:
                return BeliefState.uniform(self.topology)
            messages = self.messages
        return self._priors(messages, [action])[0]

    def predict_all(self, messages: BeliefState | None = None) -> list[BeliefState]:
        """Priors for every action at once (a single prior when there is no action variable)."""
        top = self.topology
        actions = list(range(top.n_actions)) if top.n_actions else [None]
        if messages is None:
            if not self.has_context:
                return [BeliefState.uniform(top) for _ in actions]
            messages = self.messages
        return self._priors(messages, actions)

    def observe(self, prior: BeliefState, columns) -> BeliefState:
        return observe(self.topology, prior, columns)

    # -- learning ------------------------------------------------------

    def sample_winners(self, belief: BeliefState) -> np.ndarray:
        """One cell per variable sampled from ``belief`` (flat ids)."""
        p = belief.probs
        cs = np.cumsum(p, axis=1)
        u = self.rng.random(p.shape[0]) * cs[:, -1]
        idx = np.minimum((cs < u[:, None]).sum(axis=1), p.shape[1] - 1)
        return idx + np.arange(p.shape[0]) * self.topology.cells_per_var

    def learn(self, prev_posterior: BeliefState, cur_posterior: BeliefState, action: int | None = None) -> None:
        """Monte-Carlo Hebbian update of segment factors and specificities."""
        top = self.topology
        prev = self.sample_winners(prev_posterior)
        if top.n_actions:
            if action is None:
                raise ValueError("an action is required when the topology has an action variable")
            prev = np.append(prev, top.action_cell(action))
        cur = self.sample_winners(cur_posterior)

        active = self._active_segments(prev)
        lr_f = self.lr_factor
        owner_hit = np.isin(self._owner[active], cur)
        self._factor[active[owner_hit]] += lr_f * (1.0 - self._factor[active[owner_hit]])
        self._factor[active[~owner_hit]] *= 1.0 - lr_f

        for j in np.setdiff1d(cur, self._owner[active[owner_hit]]):
            # growth only happens without an active segment, so an identical
            # receptive field can never already exist on this cell
            rf = self.rng.choice(prev, size=top.field_size, replace=False)
            self.add_segment(int(j), rf)

        if self.lr_weight:
            touched = set()
            for u in prev:
                touched |= self._by_presyn[int(u)]
            if touched:
                touched = np.fromiter(touched, dtype=np.int64)
                touched.sort()
                hit = np.isin(self._rf[touched], prev)
                s = hit.all(axis=1).astype(np.float64)[:, None]
                w = self._w[touched]
                self._w[touched] = np.where(hit, w + self.lr_weight * (s - w), w)
        self._cache = None

    def _active_segments(self, winners: np.ndarray) -> np.ndarray:
        cand = set()
        for u in winners:
            cand |= self._by_presyn[int(u)]
        if not cand:
            return np.zeros(0, dtype=np.int64)
        cand = np.fromiter(cand, dtype=np.int64)
        cand.sort()
        return cand[np.isin(self._rf[cand], winners).all(axis=1)]

    # -- loop ----------------------------------------------------------

    def step(self, action: int | None, columns, learn: bool = True) -> tuple[BeliefState, BeliefState]:
        """Predict, correct with the observation, learn, and carry the posterior forward."""
        prior = self.predict(action)
        posterior = self.observe(prior, columns)
        if learn and self.has_context:
            self.learn(self.messages, posterior, action)
        self.messages = posterior
        self.has_context = True
        return prior, posterior

    def reset(self) -> None:
        self.messages = BeliefState.uniform(self.topology)
        self.has_context = False

    def rollout(self, horizon: int,
                action_sampler: Callable[[BeliefState, list[BeliefState]], int | None],
                trace: list | None = None) -> tuple[list[np.ndarray], BeliefState]:
        """Open-loop prediction ``horizon`` steps ahead from the current messages.

        At every step the priors for all actions are computed and
        ``action_sampler(belief, priors)`` picks the action to follow (it may
        return None when there is no action variable). Returns the per-step
        observation-state distributions, each of shape ``(n_vars,
        n_obs_states)``, and the last predicted belief. Every predicted belief
        is also appended to ``trace`` when one is given. Memory state is left
        untouched.
        """
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        belief = self.messages.copy()
        has_context = self.has_context
        dists = []
        for _ in range(horizon):
            if has_context:
                priors = self.predict_all(belief)
            else:
                priors = [BeliefState.uniform(self.topology)] * max(self.topology.n_actions, 1)
                has_context = True
            action = action_sampler(belief, priors)
            belief = priors[0 if action is None else action]
            dists.append(belief.column_marginals(self.topology))
            if trace is not None:
                trace.append(belief)
        return dists, belief

    def snapshot(self) -> "Memory":
        return copy.deepcopy(self)

    # -- persistence ---------------------------------------------------

    def state_dict(self) -> dict:
        live = np.flatnonzero(self._alive)
        return {
            "owner": self._owner[live], "factor": self._factor[live],
            "rf": self._rf[live], "w": self._w[live],
            "messages": self.messages.probs, "has_context": self.has_context,
            "rng": self.rng.bit_generator.state,
        }

    def load_state_dict(self, state: dict) -> None:
        n = self.topology.field_size
        owner = np.asarray(state["owner"], dtype=np.int64)
        self._owner = owner.copy()
        self._factor = np.asarray(state["factor"], dtype=np.float64).copy()
        self._rf = np.asarray(state["rf"], dtype=np.int64).reshape(-1, n).copy()
        self._w = np.asarray(state["w"], dtype=np.float64).reshape(-1, n).copy()
        self._alive = np.ones(owner.size, dtype=bool)
        self._cache = None
        self._free = []
        self._by_cell = [set() for _ in range(self.topology.n_hidden)]
        self._by_presyn = [set() for _ in range(self.topology.n_context)]
        for sid in range(owner.size):
            self._by_cell[int(owner[sid])].add(sid)
            for u in self._rf[sid]:
                self._by_presyn[int(u)].add(sid)
        self.messages = BeliefState(np.asarray(state["messages"], dtype=np.float64).copy())
        self.has_context = bool(state["has_context"])
        self.rng.bit_generator.state = state["rng"]
