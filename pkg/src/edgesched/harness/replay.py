"""Scripted scenario replay.

A fixture is a line-oriented text file::

    servers 4                          # optional, default 4
    arrival <t> <c_k>                  # task ids are 1, 2, ... in file order
    decide <t> <task_id> <steps> <server ids...> [init=<s>] [exec=<s>]
    noop <t>

Server ids are 0-based.  ``init=`` and ``exec=`` pin the durations of
that placement; otherwise the timing model applies.  Decisions run in
file order through ``EdgeClusterEnv.step``.  The clock moves from event
to event (no minimum decision interval), so a decision time must be an
arrival or completion instant that the simulation actually reaches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional, Union

from ..core import Decision, Task
from ..env import ArrivalConfig, EdgeClusterEnv, EnvConfig, PlacementError

TIME_TOL = 1e-6


class ReplayError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class _Step:
    lineno: int
    time: float
    task_id: Optional[int] = None
    steps: Optional[int] = None
    servers: tuple = ()
    init: Optional[float] = None
    exec: Optional[float] = None


@dataclass(frozen=True)
class Scenario:
    n_servers: int
    tasks: tuple
    steps: tuple


@dataclass(frozen=True)
class ReplayRow:
    task: int
    arrival: float
    start: float
    servers: tuple
    steps: int
    wait: float
    init: float
    exec: float
    response: float
    reuse: bool
    quality: float


@dataclass
class ReplayResult:
    rows: List[ReplayRow]
    trace: List[dict]

    @property
    def latencies(self) -> List[float]:
        return [r.response for r in self.rows]

    @property
    def mean_latency(self) -> Optional[float]:
        return math.fsum(self.latencies) / len(self.rows) if self.rows else None


def parse_fixture(text: str) -> Scenario:
    n_servers = 4
    tasks, steps = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "servers":
                (n,) = rest
                n_servers = int(n)
            elif head == "arrival":
                t, c = rest
                tasks.append(Task(id=len(tasks) + 1, prompt_id=0, parallelism=int(c), arrival_time=float(t)))
            elif head == "noop":
                (t,) = rest
                steps.append(_Step(lineno, float(t)))
            elif head == "decide":
                if len(rest) == 2 and rest[1] == "noop":
                    steps.append(_Step(lineno, float(rest[0])))
                    continue
                positional = [r for r in rest if "=" not in r]
                options = dict(r.split("=", 1) for r in rest if "=" in r)
                unknown = set(options) - {"init", "exec"}
                if unknown:
                    raise ValueError(f"unknown option(s) {sorted(unknown)}")
                t, task_id, n_steps, *servers = positional
                steps.append(_Step(lineno, float(t), int(task_id), int(n_steps),
                                   tuple(int(s) for s in servers),
                                   float(options["init"]) if "init" in options else None,
                                   float(options["exec"]) if "exec" in options else None))
            else:
                raise ValueError(f"unknown record {head!r}")
        except ValueError as exc:
            raise ReplayError(lineno, f"{exc} in {raw.strip()!r}") from None
    for prev, cur in zip(steps, steps[1:]):
        if cur.time < prev.time:
            raise ReplayError(cur.lineno, "decision times must be nondecreasing")
    return Scenario(n_servers, tuple(tasks), tuple(steps))


def scenario_env(scenario: Scenario) -> EdgeClusterEnv:
    n = len(scenario.tasks)
    cfg = EnvConfig(
        n_servers=scenario.n_servers,
        queue_window=max(5, n),
        arrival=ArrivalConfig(tasks_per_episode=n, time_limit=1e9, decision_limit=10 ** 9),
        min_decision_interval=0.0,
    )
    return EdgeClusterEnv(cfg, record_trace=True)


def run_scenario(scenario: Scenario) -> ReplayResult:
    env = scenario_env(scenario)
    env.reset(tasks=scenario.tasks)
    for step in scenario.steps:
        while not env.done and env.now < step.time - TIME_TOL:
            env.step(Decision.noop())
        if env.done:
            raise ReplayError(step.lineno, f"episode ended at t={env.now:g} before this decision")
        if env.now > step.time + TIME_TOL:
            raise ReplayError(step.lineno, f"no decision epoch at t={step.time:g}; clock is at t={env.now:g}")
        if step.task_id is None:
            env.step(Decision.noop())
            continue
        index = next((i for i, t in enumerate(env.queue) if t.id == step.task_id), None)
        if index is None:
            raise ReplayError(step.lineno, f"task {step.task_id} is not waiting at t={env.now:g}")
        decision = Decision.schedule(index, step.steps, step.servers, step.init, step.exec)
        try:
            out = env.step(decision)
        except (PlacementError, ValueError) as exc:
            raise ReplayError(step.lineno, str(exc)) from None
        if out.info.get("infeasible"):
            raise ReplayError(step.lineno, f"task {step.task_id} could not be placed")
    while not env.done:
        env.step(Decision.noop())
    rows = [ReplayRow(r.task_id, r.arrival, r.start, r.servers, r.steps, r.wait, r.init, r.exec,
                      r.response_time, r.reuse, r.quality)
            for r in sorted(env.records.values(), key=lambda r: r.task_id)]
    return ReplayResult(rows, env.trace)


def run_replay(fixture: Union[str, Path]) -> ReplayResult:
    """Replay a fixture file, or a bundled fixture by name ("traditional", "eat")."""
    return run_scenario(parse_fixture(read_fixture(fixture)))


def bundled_fixtures() -> List[str]:
    files = resources.files("edgesched") / "fixtures"
    return sorted(p.name[: -len(".replay")] for p in files.iterdir() if p.name.endswith(".replay"))


def read_fixture(fixture: Union[str, Path]) -> str:
    path = Path(fixture)
    if path.exists():
        return path.read_text()
    if str(fixture) in bundled_fixtures():
        return (resources.files("edgesched") / "fixtures" / f"{fixture}.replay").read_text()
    raise FileNotFoundError(f"no fixture file or bundled fixture named {fixture!r}")
