"""Pinball-like partially observable environment.

A ball moves on a bordered rectangle. Each step the agent adds one of a
few momentum vectors to the ball velocity; the ball then moves with linear
friction and bounces off the borders. Circular force fields pay rewards,
may end the episode, and may deflect the ball. The agent only sees a
grayscale top view with the ball drawn as a disk; fields are invisible.

World coordinates have y pointing up, with the origin at the bottom-left
corner. Image row 0 is the top edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np


class Deflection(str, Enum):
    NONE = "none"
    RANDOM = "random"
    PERPENDICULAR = "perpendicular"


@dataclass(frozen=True)
class ForceField:
    center: tuple[float, float]
    radius: float
    reward: float = 0.0
    terminal: bool = False
    deflection: Deflection = Deflection.NONE

    def __post_init__(self):
        object.__setattr__(self, "deflection", Deflection(self.deflection))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


def _default_actions(magnitude: float = 1.5) -> tuple[tuple[float, float], ...]:
    s, c = math.sin(math.radians(30)), math.cos(math.radians(30))
    return ((0.0, magnitude), (-s * magnitude, c * magnitude), (s * magnitude, c * magnitude))


def _default_fields() -> tuple[ForceField, ...]:
    return (
        ForceField((25.0, 22.0), 4.0, reward=1.0, terminal=True),
        ForceField((8.0, 30.0), 4.0, reward=0.5, terminal=True),
        ForceField((42.0, 30.0), 4.0, reward=0.5, terminal=True),
    )


@dataclass(frozen=True)
class PinballConfig:
    width: float = 50.0
    height: float = 36.0
    resolution: tuple[int, int] = (50, 36)  # (columns, rows)
    ball_radius: float = 1.5
    friction: float = 0.1
    substeps: int = 10
    start: tuple[float, float] = (25.0, 3.0)
    start_velocity: tuple[float, float] = (0.0, 0.0)
    fields: tuple[ForceField, ...] = field(default_factory=_default_fields)
    step_reward: float = -0.02
    actions: tuple[tuple[float, float], ...] = field(default_factory=_default_actions)
    max_steps: int = 15

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("surface size must be positive")
        if min(self.resolution) <= 0:
            raise ValueError("resolution must be positive")
        if self.ball_radius <= 0 or 2 * self.ball_radius >= min(self.width, self.height):
            raise ValueError("ball radius does not fit the surface")
        if self.friction < 0 or self.substeps < 1 or self.max_steps < 1:
            raise ValueError("friction must be >= 0, substeps and max_steps >= 1")
        if not self.actions:
            raise ValueError("at least one action is required")
        fields = tuple(f if isinstance(f, ForceField) else ForceField(**f) for f in self.fields)
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "actions", tuple(tuple(float(x) for x in a) for a in self.actions))
        for f in fields:
            x, y = f.center
            if not (0 <= x <= self.width and 0 <= y <= self.height) or f.radius <= 0:
                raise ValueError(f"force field {f} lies outside the surface")
        sx, sy = self.start
        r = self.ball_radius
        if not (r <= sx <= self.width - r and r <= sy <= self.height - r):
            raise ValueError("start position must keep the ball inside the borders")

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def obscured(self, index: int = 0) -> "PinballConfig":
        """Turn field ``index`` into a reward-free, non-terminal perpendicular deflector."""
        fields = list(self.fields)
        fields[index] = replace(fields[index], reward=0.0, terminal=False,
                                deflection=Deflection.PERPENDICULAR)
        return replace(self, fields=tuple(fields))


@dataclass
class EnvState:
    position: np.ndarray
    velocity: np.ndarray
    steps: int = 0
    terminal: bool = False
    truncated: bool = False  # ended by the step limit rather than a terminal field


class Pinball:
    """Simulator with explicit Euler substeps and a seeded generator for deflections."""

    def __init__(self, config: PinballConfig | None = None, seed: int | np.random.Generator | None = 0):
        self.config = config or PinballConfig()
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        cols, rows = self.config.resolution
        sx, sy = self.config.width / cols, self.config.height / rows
        self._px = (np.arange(cols) + 0.5) * sx
        self._py = self.config.height - (np.arange(rows) + 0.5) * sy
        self.state: EnvState | None = None
        self._inside: np.ndarray | None = None

    def reset(self) -> np.ndarray:
        c = self.config
        self.state = EnvState(np.array(c.start, dtype=np.float64), np.array(c.start_velocity, dtype=np.float64))
        self._inside = self._inside_fields(self.state.position)
        if any(c.fields[i].terminal for i in np.flatnonzero(self._inside)):
            self.state.terminal = True
        return self.render()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        if self.state.terminal:
            raise RuntimeError("step() called on a terminal state")
        c = self.config
        if not 0 <= action < c.n_actions:
            raise ValueError(f"invalid action {action}")
        st = self.state
        st.velocity = st.velocity + np.asarray(c.actions[action])
        reward = c.step_reward
        dt = 1.0 / c.substeps
        damp = max(0.0, 1.0 - c.friction * dt)
        for _ in range(c.substeps):
            st.position = st.position + st.velocity * dt
            self._reflect(st)
            st.velocity = st.velocity * damp
            inside = self._inside_fields(st.position)
            for i in np.flatnonzero(inside & ~self._inside):
                f = c.fields[i]
                reward += f.reward
                st.velocity = self._deflect(f, st.velocity)
                if f.terminal:
                    st.terminal = True
            self._inside = inside
            if st.terminal:
                break
        st.steps += 1
        if st.steps >= c.max_steps and not st.terminal:
            st.terminal = st.truncated = True
        return self.render(), float(reward), st.terminal

    def _reflect(self, st: EnvState) -> None:
        r = self.config.ball_radius
        for axis, hi in ((0, self.config.width), (1, self.config.height)):
            lo_b, hi_b = r, hi - r
            p = st.position[axis]
            # fold back until inside; one fold suffices unless the step is huge
            while p < lo_b or p > hi_b:
                p = 2 * lo_b - p if p < lo_b else 2 * hi_b - p
                st.velocity[axis] = -st.velocity[axis]
            st.position[axis] = p

    def _deflect(self, f: ForceField, v: np.ndarray) -> np.ndarray:
        if f.deflection is Deflection.RANDOM:
            angle = self.rng.uniform(0.0, 2 * math.pi)
            return np.hypot(*v) * np.array([math.cos(angle), math.sin(angle)])
        if f.deflection is Deflection.PERPENDICULAR:
            sign = 1.0 if self.rng.random() < 0.5 else -1.0
            return sign * np.array([-v[1], v[0]])
        return v

    def _inside_fields(self, pos: np.ndarray) -> np.ndarray:
        return np.array([np.hypot(*(pos - f.center)) < f.radius for f in self.config.fields], dtype=bool)

    def render(self) -> np.ndarray:
        """Grayscale frame, shape ``(rows, columns)``, ball pixels 1.0 and background 0.0."""
        x, y = self.state.position
        r = self.config.ball_radius
        dx = (self._px - x) ** 2
        dy = (self._py - y) ** 2
        return (dy[:, None] + dx[None, :] <= r * r).astype(np.float64)
