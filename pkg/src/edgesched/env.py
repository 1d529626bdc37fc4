"""Discrete-event edge-cluster environment.

Decision epochs happen at task arrivals and completions.  Every
``step`` optionally places one task on a gang of idle servers, then
advances the clock to the next epoch.  After a placement that leaves
tasks waiting next to an idle server, the next epoch comes one minimum
decision interval later instead.  Rewards are emitted at the
scheduling instant from the *predicted* response time.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import (
    PARALLELISM_CHOICES,
    Decision,
    ServerState,
    Task,
    encode_state,
    normalize_state,
)

_EPS = 1e-9


class EpisodeFinishedError(RuntimeError):
    pass


class PlacementError(ValueError):
    """A scripted placement referenced busy or wrong-sized server sets."""


# ---------------------------------------------------------------------------
# timing / quality models


@dataclass(frozen=True)
class TimeModel:
    """Per-patch-count model init time and per-step execution time.

    The 8-patch entries are extrapolated from the 1/2/4 trend and are only
    reachable on clusters with at least 8 servers.
    """

    init_time: Mapping[int, float] = field(
        default_factory=lambda: {1: 33.5, 2: 31.9, 4: 35.0, 8: 36.0})
    per_step_time: Mapping[int, float] = field(
        default_factory=lambda: {1: 0.53, 2: 0.29, 4: 0.20, 8: 0.15})
    extrapolated: Tuple[int, ...] = (8,)

    def __post_init__(self):
        for table in (self.init_time, self.per_step_time):
            if any(v <= 0 for v in table.values()):
                raise ValueError("time model entries must be positive")

    def exec_time(self, steps: int, patches: int) -> float:
        if steps < 1:
            raise ValueError("steps must be >= 1")
        try:
            return steps * self.per_step_time[patches]
        except KeyError:
            raise ValueError(f"no timing data for {patches} patches") from None

    def init(self, patches: int) -> float:
        try:
            return self.init_time[patches]
        except KeyError:
            raise ValueError(f"no timing data for {patches} patches") from None


@dataclass(frozen=True)
class QualityModel:
    """Monotone step -> quality curve standing in for a CLIP evaluation.

    Anchors are (steps, clip score); evaluation interpolates linearly,
    clamps outside the anchor range and multiplies by ``weight``.
    """

    anchors: Tuple[Tuple[int, float], ...] = ((10, 0.200), (17, 0.240), (20, 0.251), (25, 0.270))
    weight: float = 10.0

    def __post_init__(self):
        xs = [a[0] for a in self.anchors]
        ys = [a[1] for a in self.anchors]
        if len(xs) < 1 or any(b <= a for a, b in zip(xs, xs[1:])) or any(b <= a for a, b in zip(ys, ys[1:])):
            raise ValueError("quality anchors must be strictly increasing in both coordinates")

    def __call__(self, steps: float) -> float:
        xs = [a[0] for a in self.anchors]
        ys = [a[1] for a in self.anchors]
        return self.weight * float(np.interp(steps, xs, ys))

    @property
    def saturation_steps(self) -> int:
        return self.anchors[-1][0]


DEFAULT_TIME_MODEL = TimeModel()
DEFAULT_QUALITY_MODEL = QualityModel()


def predict_exec_time(steps: int, patches: int, model: TimeModel = DEFAULT_TIME_MODEL) -> float:
    return model.exec_time(steps, patches)


def predict_init_time(patches: int, model: TimeModel = DEFAULT_TIME_MODEL) -> float:
    return model.init(patches)


def quality_of(steps: int, model: QualityModel = DEFAULT_QUALITY_MODEL) -> float:
    return model(steps)


# ---------------------------------------------------------------------------
# reward


@dataclass(frozen=True)
class RewardParams:
    alpha_q: float = 1.0
    beta_t: float = 0.01
    mu_t: float = 0.01
    lambda_q: float = 1.0
    q_min: float = 2.3
    p_quality: float = 1.0
    floor: float = 1e-3

    def __post_init__(self):
        for name in ("alpha_q", "beta_t", "mu_t", "lambda_q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.floor <= 0:
            raise ValueError("floor must be positive")


def quality_penalty(quality: float, params: RewardParams) -> float:
    return params.p_quality if quality < params.q_min else 0.0


def compute_reward(quality: float, response_time: float, queue_avg_wait: float,
                   params: RewardParams = RewardParams()) -> float:
    if response_time < 0 or queue_avg_wait < 0:
        raise ValueError("times must be nonnegative")
    denom = max(params.beta_t * response_time + params.mu_t * queue_avg_wait, params.floor)
    return (params.alpha_q * quality
            - params.lambda_q * quality_penalty(quality, params)
            + 1.0 / denom)


# ---------------------------------------------------------------------------
# arrivals


def default_parallelism_weights(n_servers: int) -> Tuple[float, ...]:
    feasible = [c for c in PARALLELISM_CHOICES if c <= n_servers]
    return tuple(1.0 / len(feasible) if c in feasible else 0.0 for c in PARALLELISM_CHOICES)


@dataclass(frozen=True)
class ArrivalConfig:
    """Poisson task stream: exponential gaps with ``rate`` tasks/second."""

    rate: float = 0.05
    parallelism_weights: Optional[Tuple[float, ...]] = None
    tasks_per_episode: int = 32
    time_limit: float = 1024.0
    decision_limit: int = 1024

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.tasks_per_episode < 0:
            raise ValueError("tasks_per_episode must be >= 0")
        if self.parallelism_weights is not None:
            w = np.asarray(self.parallelism_weights, dtype=float)
            if w.shape != (len(PARALLELISM_CHOICES),) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                raise ValueError("parallelism_weights must be 4 nonnegative weights summing to 1")


def sample_interarrival(rng: np.random.Generator, rate: float) -> float:
    gap = rng.exponential(1.0 / rate)
    # exponential draws of exactly 0.0 are possible in principle
    return gap if gap > 0 else np.nextafter(0.0, 1.0)


def sample_parallelism(rng: np.random.Generator, weights: Sequence[float]) -> int:
    return int(PARALLELISM_CHOICES[rng.choice(len(PARALLELISM_CHOICES), p=np.asarray(weights))])


@dataclass(frozen=True)
class EnvConfig:
    n_servers: int = 4
    queue_window: int = 5
    s_min: int = 10
    s_max: int = 50
    arrival: ArrivalConfig = ArrivalConfig()
    time_model: TimeModel = DEFAULT_TIME_MODEL
    quality_model: QualityModel = DEFAULT_QUALITY_MODEL
    reward: RewardParams = RewardParams()
    min_decision_interval: float = 1.0
    time_scale: float = 100.0

    def __post_init__(self):
        if self.n_servers < 1 or self.queue_window < 1:
            raise ValueError("need at least one server and a queue window of at least 1")
        if not 1 <= self.s_min <= self.s_max:
            raise ValueError("require 1 <= s_min <= s_max")
        if self.min_decision_interval < 0:
            raise ValueError("min_decision_interval must be >= 0")

    @property
    def parallelism_weights(self) -> Tuple[float, ...]:
        if self.arrival.parallelism_weights is not None:
            return tuple(self.arrival.parallelism_weights)
        return default_parallelism_weights(self.n_servers)

    @property
    def action_dim(self) -> int:
        return self.queue_window + 2

    @property
    def state_shape(self) -> Tuple[int, int]:
        return (3, self.n_servers + self.queue_window)


def grid_config(n_servers: int, **overrides) -> EnvConfig:
    """Cluster size with the matching arrival rate from the evaluation grid."""
    rates = {4: 0.05, 8: 0.1, 12: 0.15}
    if n_servers not in rates:
        raise ValueError("the evaluation grid covers 4, 8 and 12 servers")
    arrival = overrides.pop("arrival", ArrivalConfig(rate=rates[n_servers]))
    return EnvConfig(n_servers=n_servers, arrival=arrival, **overrides)


# ---------------------------------------------------------------------------
# server selection


def model_reuse_group(servers: Sequence[ServerState], model_id: int) -> set:
    """Idle servers currently holding ``model_id``."""
    return {s.id for s in servers if s.available == 1 and s.loaded_model == model_id}


@dataclass(frozen=True)
class Placement:
    servers: Tuple[int, ...]
    reuse: bool


def _idle_groups(idle: Sequence[ServerState]) -> Dict[Tuple[int, int], List[int]]:
    groups = defaultdict(list)
    for s in idle:
        if s.loaded_model:
            groups[(s.loaded_model, s.group)].append(s.id)
    return groups


def select_servers(servers: Sequence[ServerState], c_k: int, model_id: int) -> Optional[Placement]:
    """Pick a gang of ``c_k`` idle servers, or None when infeasible.

    An idle load group holding ``model_id`` with exactly ``c_k`` members
    is reused as-is.  Otherwise servers are consumed in this order:
    leftover members of broken groups, unloaded servers, and finally the
    fewest possible intact groups.  Remaining ties go to the lowest ids.
    """
    idle = [s for s in servers if s.available == 1]
    if len(idle) < c_k:
        return None
    groups = _idle_groups(idle)
    for (model, _), members in sorted(groups.items(), key=lambda kv: min(kv[1])):
        if model == model_id and len(members) == c_k:
            return Placement(tuple(sorted(members)), True)

    intact = [sorted(m) for (model, _), m in groups.items() if len(m) == model]
    in_intact = {i for m in intact for i in m}
    fragments = sorted(s.id for s in idle if s.loaded_model and s.id not in in_intact)
    unloaded = sorted(s.id for s in idle if not s.loaded_model)
    chosen = (fragments + unloaded)[:c_k]
    need = c_k - len(chosen)
    if need == 0:
        return Placement(tuple(sorted(chosen)), False)

    best = None
    for k in range(1, len(intact) + 1):
        for combo in itertools.combinations(intact, k):
            pool = sorted(i for m in combo for i in m)
            if len(pool) < need:
                continue
            cand = tuple(sorted(chosen + pool[:need]))
            if best is None or cand < best:
                best = cand
        if best is not None:
            break
    return Placement(best, False)


# ---------------------------------------------------------------------------
# environment


@dataclass
class StepOutcome:
    next_state: np.ndarray
    reward: float
    done: bool
    info: dict


@dataclass
class TaskRecord:
    task_id: int
    arrival: float
    parallelism: int
    start: float
    steps: int
    servers: Tuple[int, ...]
    wait: float
    init: float
    exec: float
    quality: float
    reuse: bool
    reward: float

    @property
    def completion(self) -> float:
        return self.start + self.init + self.exec

    @property
    def response_time(self) -> float:
        return self.wait + self.init + self.exec


class EdgeClusterEnv:
    """Gang-scheduling simulator for split generative tasks."""

    def __init__(self, config: EnvConfig = EnvConfig(), record_trace: bool = False):
        self.config = config
        self.record_trace = record_trace
        self.now = 0.0
        self.done = True
        self.trace: List[dict] = []

    # -- lifecycle ---------------------------------------------------------

    def sample_tasks(self, seed: int) -> List[Task]:
        cfg = self.config
        gap_seq, par_seq, prompt_seq = np.random.SeedSequence(seed).spawn(3)
        gap_rng = np.random.default_rng(gap_seq)
        par_rng = np.random.default_rng(par_seq)
        prompt_rng = np.random.default_rng(prompt_seq)
        weights = cfg.parallelism_weights
        tasks, t = [], 0.0
        for k in range(cfg.arrival.tasks_per_episode):
            if k:
                t += sample_interarrival(gap_rng, cfg.arrival.rate)
            tasks.append(Task(id=k + 1, prompt_id=int(prompt_rng.integers(1 << 16)),
                              parallelism=sample_parallelism(par_rng, weights), arrival_time=t))
        return tasks

    def reset(self, seed: int = 0, tasks: Optional[Sequence[Task]] = None) -> np.ndarray:
        """Start an episode with sampled arrivals, or with ``tasks`` verbatim."""
        cfg = self.config
        if tasks is None:
            tasks = self.sample_tasks(seed)
        tasks = sorted(tasks, key=lambda t: (t.arrival_time, t.id))
        for t in tasks:
            if t.arrival_time < 0:
                raise ValueError("arrival times must be >= 0")
            if t.parallelism > cfg.n_servers:
                raise ValueError(f"task {t.id} needs {t.parallelism} servers; cluster has {cfg.n_servers}")
        self.tasks = list(tasks)
        self.n_tasks = len(self.tasks)
        self._next_arrival = 0
        self.now = 0.0
        self.queue: List[Task] = []
        self.busy_until = [0.0] * cfg.n_servers
        self.loaded = [0] * cfg.n_servers
        self.group = [0] * cfg.n_servers
        self._next_group = 1
        self.records: Dict[int, TaskRecord] = {}
        self.decisions = 0
        self.done = False
        self.trace = []
        self._deliver_arrivals()
        self._check_done()
        return self.observe()

    def clone(self) -> "EdgeClusterEnv":
        """Independent copy for look-ahead; the clone does not record a trace."""
        new = object.__new__(EdgeClusterEnv)
        new.__dict__ = self.__dict__.copy()
        new.queue = list(self.queue)
        new.busy_until = list(self.busy_until)
        new.loaded = list(self.loaded)
        new.group = list(self.group)
        new.records = dict(self.records)
        new.record_trace = False
        new.trace = []
        return new

    # -- observation -------------------------------------------------------

    @property
    def servers(self) -> List[ServerState]:
        out = []
        for e in range(self.config.n_servers):
            rem = self.busy_until[e] - self.now
            if rem <= _EPS:
                out.append(ServerState(e, 1, 0.0, self.loaded[e], self.group[e]))
            else:
                out.append(ServerState(e, 0, rem, self.loaded[e], self.group[e]))
        return out

    def observe(self) -> np.ndarray:
        return encode_state(self.servers, self.queue, self.now, self.config.queue_window)

    def observe_normalized(self) -> np.ndarray:
        return normalize_state(self.observe(), self.config.n_servers, self.config.time_scale)

    def queue_avg_wait(self, now: Optional[float] = None) -> float:
        now = self.now if now is None else now
        if not self.queue:
            return 0.0
        return sum(now - t.arrival_time for t in self.queue) / len(self.queue)

    @property
    def n_not_arrived(self) -> int:
        return self.n_tasks - self._next_arrival

    @property
    def n_finished(self) -> int:
        return sum(1 for r in self.records.values() if r.completion <= self.now + _EPS)

    # -- dynamics ----------------------------------------------------------

    def _emit(self, **event):
        if self.record_trace:
            self.trace.append(event)

    def _deliver_arrivals(self):
        while self._next_arrival < self.n_tasks and self.tasks[self._next_arrival].arrival_time <= self.now + _EPS:
            task = self.tasks[self._next_arrival]
            self.queue.append(task)
            self._next_arrival += 1
            self._emit(event="arrival", time=task.arrival_time, task=task.id, parallelism=task.parallelism)

    def _next_event_time(self) -> Optional[float]:
        times = [t for t in self.busy_until if t > self.now + _EPS]
        if self._next_arrival < self.n_tasks:
            times.append(self.tasks[self._next_arrival].arrival_time)
        return min(times) if times else None

    def _advance(self, placed: bool = False):
        cfg = self.config
        target = self._next_event_time()
        if placed and self.queue and any(t <= self.now + _EPS for t in self.busy_until):
            # work is still waiting next to an idle server: decide again soon
            target = self.now + cfg.min_decision_interval
        elif target is None:
            target = self.now + cfg.min_decision_interval if cfg.min_decision_interval > 0 else cfg.arrival.time_limit
        target = max(target, self.now + cfg.min_decision_interval)
        target = min(target, max(cfg.arrival.time_limit, self.now))
        before = self.now
        self.now = target
        for rec in sorted(self.records.values(), key=lambda r: (r.completion, r.task_id)):
            if before + _EPS < rec.completion <= self.now + _EPS:
                self._emit(event="complete", time=rec.completion, task=rec.task_id, servers=list(rec.servers))
        self._deliver_arrivals()

    def _check_done(self):
        cfg = self.config
        all_finished = (self._next_arrival == self.n_tasks and not self.queue
                        and all(r.completion <= self.now + _EPS for r in self.records.values()))
        self.done = (all_finished or self.now >= cfg.arrival.time_limit - _EPS
                     or self.decisions >= cfg.arrival.decision_limit)
        if self.done:
            self._emit(event="end", time=self.now)

    def _resolve_placement(self, task: Task, decision: Decision) -> Optional[Placement]:
        if decision.servers is None:
            return select_servers(self.servers, task.parallelism, task.parallelism)
        servers = self.servers
        ids = decision.servers
        if len(ids) != task.parallelism or len(set(ids)) != len(ids):
            raise PlacementError(f"task {task.id} needs {task.parallelism} distinct servers, got {list(ids)}")
        for i in ids:
            if not 0 <= i < len(servers):
                raise PlacementError(f"server {i} does not exist")
            if servers[i].available != 1:
                raise PlacementError(f"server {i} is busy until t={self.busy_until[i]:.3f}")
        reuse_ids = select_servers([servers[i] for i in ids], task.parallelism, task.parallelism)
        return Placement(tuple(sorted(ids)), bool(reuse_ids and reuse_ids.reuse))

    def _place(self, decision: Decision) -> Tuple[float, dict]:
        cfg = self.config
        if decision.task_index >= min(len(self.queue), cfg.queue_window):
            return 0.0, {"infeasible": True}
        if not cfg.s_min <= decision.steps <= cfg.s_max:
            raise ValueError(f"steps {decision.steps} outside [{cfg.s_min}, {cfg.s_max}]")
        task = self.queue[decision.task_index]
        placement = self._resolve_placement(task, decision)
        if placement is None:
            return 0.0, {"infeasible": True}
        c = task.parallelism
        wait = self.now - task.arrival_time
        if decision.exec_override is not None:
            exec_t = float(decision.exec_override)
        else:
            exec_t = cfg.time_model.exec_time(decision.steps, c)
        if decision.init_override is not None:
            init_t = float(decision.init_override)
        else:
            init_t = 0.0 if placement.reuse else cfg.time_model.init(c)
        quality = cfg.quality_model(decision.steps)
        reward = compute_reward(quality, wait + init_t + exec_t, self.queue_avg_wait(), cfg.reward)

        group = self.group[placement.servers[0]] if placement.reuse else self._next_group
        if not placement.reuse:
            self._next_group += 1
        for e in placement.servers:
            self.busy_until[e] = self.now + init_t + exec_t
            self.loaded[e] = c
            self.group[e] = group
        del self.queue[decision.task_index]
        rec = TaskRecord(task.id, task.arrival_time, c, self.now, decision.steps, placement.servers,
                         wait, init_t, exec_t, quality, placement.reuse, reward)
        self.records[task.id] = rec
        self._emit(event="schedule", time=self.now, task=task.id, servers=list(placement.servers),
                   steps=decision.steps, wait=wait, init=init_t, exec=exec_t, quality=quality,
                   reward=reward, reuse=placement.reuse)
        return reward, {"task": task.id, "wait": wait, "init": init_t, "exec": exec_t,
                        "quality": quality, "reload": not placement.reuse, "servers": placement.servers}

    def preview_reward(self, decision: Decision) -> float:
        """Immediate reward ``decision`` would earn now, without side effects."""
        if decision.is_noop:
            return 0.0
        reward, _ = self.clone()._place(decision)
        return reward

    def step(self, decision: Decision) -> StepOutcome:
        if self.done:
            raise EpisodeFinishedError("episode is finished; call reset()")
        reward, info = 0.0, {}
        if not decision.is_noop:
            reward, info = self._place(decision)
        if decision.is_noop or info.get("infeasible"):
            self._emit(event="noop", time=self.now, infeasible=bool(info.get("infeasible")))
        self.decisions += 1
        self._advance(placed=not decision.is_noop and not info.get("infeasible"))
        self._check_done()
        return StepOutcome(self.observe(), reward, self.done, info)

    # -- metrics -----------------------------------------------------------

    def episode_metrics(self) -> dict:
        """Quality/latency/reload summary of the episode so far.

        Tasks that arrived but were never scheduled contribute a censored
        latency (current clock minus arrival).
        """
        recs = list(self.records.values())
        latencies = [r.response_time for r in recs]
        latencies += [self.now - t.arrival_time for t in self.queue]
        n = len(recs)
        return {
            "scheduled": n,
            "arrived": self._next_arrival,
            "mean_quality": float(np.mean([r.quality for r in recs])) if n else float("nan"),
            "mean_latency": float(np.mean(latencies)) if latencies else float("nan"),
            "reload_rate": sum(not r.reuse for r in recs) / n if n else float("nan"),
            "total_reward": float(sum(r.reward for r in recs)),
        }
