"""Domain types and the state/action codecs shared by every scheduler."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

PARALLELISM_CHOICES = (1, 2, 4, 8)


@dataclass(frozen=True)
class Task:
    """One generative job waiting for, or running on, a server gang."""

    id: int
    prompt_id: int
    parallelism: int
    arrival_time: float
    steps: Optional[int] = None
    start_time: Optional[float] = None
    completion_time: Optional[float] = None

    def __post_init__(self):
        if self.parallelism not in PARALLELISM_CHOICES:
            raise ValueError(f"parallelism must be one of {PARALLELISM_CHOICES}, got {self.parallelism}")
        if self.start_time is not None and self.start_time < self.arrival_time - 1e-9:
            raise ValueError("task cannot start before it arrives")
        if self.completion_time is not None:
            if self.start_time is None or self.completion_time < self.start_time - 1e-9:
                raise ValueError("completion_time must follow start_time")


@dataclass(frozen=True)
class ServerState:
    """Observable server triple plus the load-group tag used for model reuse.

    ``loaded_model`` is the gang size of the configuration currently loaded
    (0 when nothing is loaded).  ``group`` identifies which servers were
    loaded together; servers built by hand share group 0.
    """

    id: int
    available: int = 1
    remaining_time: float = 0.0
    loaded_model: int = 0
    group: int = 0

    def __post_init__(self):
        if self.remaining_time < 0:
            raise ValueError("remaining_time must be nonnegative")
        if (self.available == 1) != (self.remaining_time == 0):
            raise ValueError("a server is available exactly when its remaining time is 0")


class DecisionKind(str, Enum):
    NOOP = "noop"
    SCHEDULE = "schedule"


@dataclass(frozen=True)
class Decision:
    """A decoded scheduling decision.

    ``servers``, ``init_override`` and ``exec_override`` are only set by
    scripted replays, which pin placement and durations explicitly.
    """

    kind: DecisionKind = DecisionKind.NOOP
    task_index: Optional[int] = None
    steps: Optional[int] = None
    servers: Optional[tuple] = None
    init_override: Optional[float] = None
    exec_override: Optional[float] = None

    def __post_init__(self):
        if self.kind is DecisionKind.NOOP and (self.task_index is not None or self.steps is not None):
            raise ValueError("a NoOp decision carries no task or steps")
        if self.kind is DecisionKind.SCHEDULE and (self.task_index is None or self.steps is None):
            raise ValueError("a Schedule decision needs task_index and steps")

    @classmethod
    def noop(cls) -> "Decision":
        return cls()

    @classmethod
    def schedule(cls, task_index: int, steps: int, servers=None, init_override=None,
                 exec_override=None) -> "Decision":
        if servers is not None:
            servers = tuple(int(s) for s in servers)
        return cls(DecisionKind.SCHEDULE, int(task_index), int(steps), servers, init_override, exec_override)

    @property
    def is_noop(self) -> bool:
        return self.kind is DecisionKind.NOOP


@dataclass
class Experience:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    done: bool = False

    def __post_init__(self):
        if np.shape(self.state) != np.shape(self.next_state):
            raise ValueError("state and next_state must share a shape")


def state_shape(n_servers: int, queue_window: int) -> tuple:
    return (3, n_servers + queue_window)


def encode_state(servers: Sequence[ServerState], queue: Sequence[Task], now: float,
                 queue_window: int) -> np.ndarray:
    """Build the raw 3 x (|E| + l) observation matrix.

    Server columns hold (available, remaining time, loaded model); task
    columns hold (waiting time, parallelism, 0).  Only the first
    ``queue_window`` tasks are visible; missing tasks are zero columns.
    """
    if queue_window < 1:
        raise ValueError("queue_window must be >= 1")
    n = len(servers)
    state = np.zeros((3, n + queue_window))
    for j, s in enumerate(servers):
        state[0, j] = s.available
        state[1, j] = s.remaining_time
        state[2, j] = s.loaded_model
    for j, task in enumerate(queue[:queue_window]):
        state[0, n + j] = now - task.arrival_time
        state[1, n + j] = task.parallelism
    return state


def normalize_state(state: np.ndarray, n_servers: int, time_scale: float = 100.0) -> np.ndarray:
    """Scale the time-valued entries of a raw state for network input."""
    out = np.array(state, dtype=float, copy=True)
    out[1, :n_servers] /= time_scale
    out[0, n_servers:] /= time_scale
    return out


def steps_from_fraction(a_s: float, s_min: int, s_max: int) -> int:
    # round half up, then clamp
    steps = math.floor(s_min + float(a_s) * (s_max - s_min) + 0.5)
    return int(min(max(steps, s_min), s_max))


def decode_action(action: Sequence[float], queue_len: int, s_min: int, s_max: int) -> Decision:
    """Map a continuous action vector ``[a_c, a_s, prefs...]`` to a Decision."""
    action = np.asarray(action, dtype=float)
    if action.ndim != 1 or action.size < 3:
        raise ValueError("action must be a vector of length l + 2 with l >= 1")
    visible = min(queue_len, action.size - 2)
    if action[0] > 0.5 or visible <= 0:
        return Decision.noop()
    # np.argmax returns the first maximum, i.e. the oldest task on ties
    index = int(np.argmax(action[2:2 + visible]))
    return Decision.schedule(index, steps_from_fraction(action[1], s_min, s_max))
