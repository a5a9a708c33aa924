"""Agent loop: event preprocessing, encoding, memory, reward model, SR learning, policy."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .encoder import SpatialPooler
from .sr import SURPRISE_FLOOR, SrMatrix, surprise
from .tm import BeliefState, Memory, columns_from_sdr


def preprocess(frame, prev_frame=None) -> np.ndarray:
    """Binary event image: pixels whose change exceeds the mean absolute change."""
    frame = np.asarray(frame, dtype=np.float64)
    if prev_frame is None:
        return np.zeros(frame.shape, dtype=np.int8)
    prev_frame = np.asarray(prev_frame, dtype=np.float64)
    if prev_frame.shape != frame.shape:
        raise ValueError("frames must have the same shape")
    delta = np.abs(frame - prev_frame)
    return (delta > delta.mean()).astype(np.int8)


def softmax(x, temperature: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64) / temperature
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


class RewardModel:
    """Running reward estimate per observation state, turned into an observation prior."""

    def __init__(self, n_vars: int, n_obs_states: int, learning_rate: float = 0.1, scale: float = 1.0):
        self.r = np.zeros((n_vars, n_obs_states))
        self.learning_rate = learning_rate
        self.scale = scale

    def learn(self, columns, reward: float) -> None:
        rows = np.arange(self.r.shape[0])
        self.r[rows, columns] += self.learning_rate * (reward - self.r[rows, columns])

    def observation_prior(self) -> np.ndarray:
        return softmax(self.scale * self.r)

    def log_prior(self) -> np.ndarray:
        """Flat reward vector for value readout: log of the observation prior."""
        x = self.scale * self.r
        m = x.max(axis=1, keepdims=True)
        return (x - m - np.log(np.exp(x - m).sum(axis=1, keepdims=True))).ravel()


class TerminationModel:
    """Per-cell estimate of the chance that an episode ends on the current step.

    Trained from the observed episode ends with a belief-weighted running
    average; used to discount imagined steps past a likely terminal.
    """

    def __init__(self, n_cells: int, n_vars: int, learning_rate: float = 0.1):
        self.e = np.zeros(n_cells)
        self.n_vars = n_vars
        self.learning_rate = learning_rate

    def learn(self, belief, ended: bool) -> None:
        b = np.asarray(belief, dtype=np.float64).ravel()
        self.e += self.learning_rate * b * (float(ended) - self.e)

    def probability(self, belief) -> float:
        b = np.asarray(belief, dtype=np.float64).ravel()
        return float(np.clip(b @ self.e / self.n_vars, 0.0, 1.0))


@dataclass
class AgentConfig:
    horizon: int = 5
    gamma: float = 0.99
    temperature: float = 1.0
    sr_learning_rate: float = 0.1
    sr_init_mass: float = 15.0  # initial SR mass per variable, spread uniformly over its states
    termination_learning_rate: float = 0.5
    reward_learning_rate: float = 0.1
    reward_scale: float = 1.0
    surprise_offsets: int = 3
    learn: bool = True

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.sr_init_mass < 0:
            raise ValueError("sr_init_mass must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class StepRecord:
    step: int
    action: int
    reward: float
    columns: np.ndarray
    readout: np.ndarray = field(repr=False)
    segments: int
    surprise: np.ndarray = field(default=None, repr=False)
    wall_time: float = 0.0


@dataclass
class EpisodeRecord:
    episode: int
    steps: list[StepRecord] = field(default_factory=list)
    error: str | None = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def total_return(self) -> float:
        return float(sum(s.reward for s in self.steps))


class Agent:
    """Memory-based agent.

    The action variable of the memory has one cell per environment action
    plus a final ``null`` cell used at the start of every episode.
    """

    def __init__(self, config: AgentConfig, encoder: SpatialPooler, memory: Memory,
                 rng: np.random.Generator):
        top = memory.topology
        if top.n_actions < 2:
            raise ValueError("memory needs at least one action cell plus the null action")
        if encoder.num_neurons != top.n_vars * top.n_obs_states or encoder.blocks != top.n_vars:
            raise ValueError("encoder must produce one winner per hidden variable")
        self.config = config
        self.encoder = encoder
        self.memory = memory
        self.rng = rng
        self.n_actions = top.n_actions - 1
        self.null_action = top.n_actions - 1
        n_obs = top.n_vars * top.n_obs_states
        self.sr = SrMatrix(top.n_hidden, n_obs, gamma=config.gamma, horizon=config.horizon,
                           learning_rate=config.sr_learning_rate,
                           M=np.full((top.n_hidden, n_obs), config.sr_init_mass / top.n_obs_states))
        self.reward_model = RewardModel(top.n_vars, top.n_obs_states, config.reward_learning_rate,
                                        config.reward_scale)
        self.termination = TerminationModel(top.n_hidden, top.n_vars, config.termination_learning_rate)
        self.action = self.null_action
        self.prev_frame = None

    def reset(self) -> None:
        self.memory.reset()
        self.action = self.null_action
        self.prev_frame = None

    def encode(self, frame) -> np.ndarray:
        events = preprocess(frame, self.prev_frame).ravel()
        self.prev_frame = np.asarray(frame)
        z = self.encoder.encode(events)
        if self.config.learn:
            self.encoder.learn(events, z)
            self.encoder.newborn_step()
        return columns_from_sdr(self.memory.topology, z)

    def observe(self, frame, reward: float, final: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Process one observation; returns the observed columns and the normalized SR readout.

        ``final`` marks a terminal observation: its SR target is the observation
        itself with no continuation.
        """
        top = self.memory.topology
        columns = self.encode(frame)
        _, posterior = self.memory.step(self.action, columns, learn=self.config.learn)
        if self.config.learn:
            self.reward_model.learn(columns, reward)
            self.termination.learn(posterior.flat, final)
            self.learn_sr(posterior, columns, final)
        return columns, self.sr.normalized_readout(posterior.flat, top.n_vars)

    def learn_sr(self, posterior: BeliefState, columns, final: bool = False) -> None:
        top = self.memory.topology
        T = self.config.horizon
        current = np.zeros((top.n_vars, top.n_obs_states))
        current[np.arange(top.n_vars), columns] = 1.0
        if final:
            self.sr.td_update(posterior.flat, [current], None)
            return
        beliefs: list[BeliefState] = []
        dists, last = self.memory.rollout(T + 1, self._rollout_action, trace=beliefs)
        # weight each imagined step by the chance the episode is still running
        alive, weighted = 1.0, [current]
        for d, b in zip(dists[:T], beliefs[:T]):
            weighted.append(alive * d)
            alive *= 1.0 - self.termination.probability(b.flat)
        self.sr.td_update(posterior.flat, weighted, alive * last.flat)

    def action_values(self, messages: BeliefState | None = None) -> np.ndarray:
        return self._values(self.memory.predict_all(messages))

    def _values(self, priors: list[BeliefState]) -> np.ndarray:
        rewards = self.reward_model.log_prior()
        return np.array([self.sr.value(priors[a].flat, rewards) for a in range(self.n_actions)])

    def policy(self, messages: BeliefState | None = None) -> np.ndarray:
        return softmax(self.action_values(messages), self.config.temperature)

    def select_action(self) -> int:
        p = self.policy()
        self.action = int(self.rng.choice(self.n_actions, p=p))
        return self.action

    def _rollout_action(self, belief: BeliefState, priors: list[BeliefState]) -> int:
        p = softmax(self._values(priors), self.config.temperature)
        return int(self.rng.choice(self.n_actions, p=p))

    def state_dict(self) -> dict:
        return {
            "encoder": self.encoder.state_dict(), "memory": self.memory.state_dict(),
            "sr": self.sr.state_dict(), "reward": self.reward_model.r, "termination": self.termination.e,
            "rng": self.rng.bit_generator.state,
        }

    def load_state_dict(self, state: dict) -> None:
        self.encoder.load_state_dict(state["encoder"])
        self.memory.load_state_dict(state["memory"])
        self.sr.load_state_dict(state["sr"])
        self.reward_model.r = np.asarray(state["reward"], dtype=np.float64).copy()
        self.termination.e = np.asarray(state["termination"], dtype=np.float64).copy()
        self.rng.bit_generator.state = state["rng"]


def run_episode(env, agent: Agent, episode: int = 0, max_steps: int | None = None,
                timing: bool = False, on_frame=None) -> EpisodeRecord:
    """One episode: observe, reinforce, learn SR, pick an action, act; repeat until terminal.

    ``on_frame(step, frame)`` is called with every raw frame before it is observed.
    """
    record = EpisodeRecord(episode)
    if max_steps == 0:
        return record
    t0 = time.perf_counter()
    agent.reset()
    frame = env.reset()
    reward, terminal = 0.0, env.state.terminal
    while True:
        if on_frame is not None:
            on_frame(len(record.steps), frame)
        columns, readout = agent.observe(frame, reward, terminal and not env.state.truncated)
        last = terminal or (max_steps is not None and len(record.steps) + 1 >= max_steps)
        action = -1 if last else agent.select_action()
        record.steps.append(StepRecord(len(record.steps), action, reward, columns, readout,
                                       agent.memory.n_segments,
                                       wall_time=time.perf_counter() - t0 if timing else 0.0))
        if last:
            break
        try:
            frame, reward, terminal = env.step(action)
        except Exception as exc:  # environment faults end the episode with a diagnostic
            record.error = f"{type(exc).__name__}: {exc}"
            break
    fill_surprise(record, agent.config.surprise_offsets)
    return record


def fill_surprise(record: EpisodeRecord, offsets: int, floor: float = SURPRISE_FLOOR) -> None:
    """Surprise of each step's SR readout against the states observed 1..offsets steps later."""
    n = len(record.steps)
    for t, s in enumerate(record.steps):
        out = np.full(offsets, np.nan)
        upto = min(offsets, n - 1 - t)
        if upto > 0:
            future = np.array([record.steps[t + l].columns for l in range(1, upto + 1)])
            out[:upto] = surprise(s.readout, future, floor)
        s.surprise = out
