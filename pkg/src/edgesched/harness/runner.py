"""Experiment orchestration: train, evaluate, optimize, benchmark, replay.

Each ``run_*`` function writes into an output directory::

    config        snapshot of the effective ExperimentConfig
    metrics.csv   deterministic metrics (eval, replay)
    curves.csv    per-episode / per-generation learning curves (train, optimize)
    trace.jsonl   one JSON object per simulator event (eval, replay)
    checkpoint    trained networks (train)
    sequence.json optimized open-loop sequence (optimize)
    timing.csv    wall-clock measurements, the only non-reproducible file
"""

from __future__ import annotations

import csv
import time
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import torch

from ..env import EdgeClusterEnv, EnvConfig
from ..estimators import EATScheduler, GeneticScheduler, HarmonyScheduler, RandomScheduler, make_scheduler
from ..policy import VARIANTS
from .config import ExperimentConfig
from .metrics import (
    MetricsReport,
    pool,
    tally_env,
    write_curves_csv,
    write_metrics_csv,
    write_timing_csv,
    write_trace,
)
from .replay import ReplayResult, run_replay

PathLike = Union[str, Path]


def default_run_dir(root: PathLike = "runs") -> Path:
    return Path(root) / datetime.now().strftime("%Y%m%d-%H%M%S-%f")


def _prepare(out_dir: Optional[PathLike], config: Optional[ExperimentConfig]) -> Path:
    out = Path(out_dir) if out_dir is not None else default_run_dir()
    out.mkdir(parents=True, exist_ok=True)
    if config is not None:
        config.save(out / "config")
    return out


def build_agent(config: ExperimentConfig, env_config: Optional[EnvConfig] = None):
    """A ready-to-decide scheduler for ``config.agent``.

    Learned agents load ``checkpoint``/``sequence`` when given and are
    trained or optimized from scratch otherwise.
    """
    env_config = env_config or config.env_config()
    if config.agent in VARIANTS and config.checkpoint:
        return EATScheduler.load(config.checkpoint, env_config, deterministic=config.deterministic)
    if config.agent in ("genetic", "harmony") and config.sequence:
        cls = GeneticScheduler if config.agent == "genetic" else HarmonyScheduler
        return cls(**config.estimator_params()).load_sequence(config.sequence, env_config)
    return make_scheduler(config.agent, **config.estimator_params()).fit(env_config)


def evaluate(agent, env_config: EnvConfig, seeds: Sequence[int], record_trace: bool = True):
    """Run one episode per seed; return (tallies, trace events)."""
    env = EdgeClusterEnv(env_config, record_trace=record_trace)
    tallies, events = [], []
    for episode, seed in enumerate(seeds):
        agent.run_episode(env, seed)
        tallies.append(tally_env(env, seed))
        events.extend({"episode": episode, "seed": seed, **ev} for ev in env.trace)
    return tallies, events


def run_eval(config: ExperimentConfig, out_dir: Optional[PathLike] = None, agent=None) -> MetricsReport:
    out = _prepare(out_dir, config)
    env_config = config.env_config()
    agent = agent if agent is not None else build_agent(config, env_config)
    started = time.perf_counter()
    tallies, events = evaluate(agent, env_config, config.eval_seeds)
    elapsed = time.perf_counter() - started
    report = pool(tallies)
    write_metrics_csv(out / "metrics.csv", config.agent, tallies, report)
    write_trace(out / "trace.jsonl", events)
    write_timing_csv(out / "timing.csv", [{"phase": "eval", "episodes": len(tallies), "seconds": elapsed}])
    return report


def run_train(config: ExperimentConfig, out_dir: Optional[PathLike] = None) -> EATScheduler:
    if config.agent not in VARIANTS:
        raise ValueError(f"train needs a learned agent ({', '.join(VARIANTS)}); got {config.agent!r}")
    out = _prepare(out_dir, config)
    est = EATScheduler(variant=config.agent, **config.estimator_params())
    est.fit(config.env_config())
    write_curves_csv(out / "curves.csv", est.history_)
    est.save(out / "checkpoint")
    write_timing_csv(out / "timing.csv", [{"episode": row["episode"], "wall_time": t}
                                          for row, t in zip(est.history_, est.trainer_.wall_times)])
    return est


def run_optimize(config: ExperimentConfig, out_dir: Optional[PathLike] = None):
    if config.agent not in ("genetic", "harmony"):
        raise ValueError(f"optimize needs agent=genetic or agent=harmony; got {config.agent!r}")
    out = _prepare(out_dir, config)
    started = time.perf_counter()
    est = make_scheduler(config.agent, **config.estimator_params()).fit(config.env_config())
    elapsed = time.perf_counter() - started
    est.save(out / "sequence.json")
    with open(out / "curves.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(est.history_[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows({k: repr(v) if isinstance(v, float) else v for k, v in row.items()}
                         for row in est.history_)
    write_timing_csv(out / "timing.csv", [{"phase": "optimize", "seconds": elapsed}])
    return est


def run_replay_to(fixture: PathLike, out_dir: Optional[PathLike] = None) -> ReplayResult:
    out = _prepare(out_dir, None)
    result = run_replay(fixture)
    (out / "fixture").write_text(str(fixture) + "\n")
    columns = ("task", "arrival", "start", "servers", "steps", "wait", "init", "exec", "response", "reuse", "quality")
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in result.rows:
            writer.writerow([r.task, repr(r.arrival), repr(r.start), " ".join(map(str, r.servers)), r.steps,
                             repr(r.wait), repr(r.init), repr(r.exec), repr(r.response), r.reuse, repr(r.quality)])
        mean = result.mean_latency
        writer.writerow(["mean", "", "", "", "", "", "", "", "" if mean is None else repr(mean), "", ""])
    write_trace(out / "trace.jsonl", result.trace)
    return result


# -- decision latency ----------------------------------------------------------


def benchmark_states(env_config: EnvConfig, n_states: int, seed: int) -> List[EdgeClusterEnv]:
    """Frozen environment snapshots with a nonempty queue, from random play."""
    walker = RandomScheduler(random_state=seed).fit(env_config)
    env = EdgeClusterEnv(env_config)
    snapshots, episode = [], 0
    while len(snapshots) < n_states:
        env.reset(seed=seed + episode)
        walker.reset_episode(seed + episode)
        while not env.done and len(snapshots) < n_states:
            if env.queue:
                snapshots.append(env.clone())
            env.step(walker.decide(env))
        episode += 1
        if episode > 10 * n_states:
            raise RuntimeError("could not collect benchmark states")
    return snapshots


def measure_decision_latency(agent, env_config: EnvConfig, n_decisions: int = 1000, n_states: int = 50,
                             seed: int = 0) -> float:
    """Mean wall-clock seconds per ``agent.decide`` call on fixed states."""
    if n_decisions < 1:
        raise ValueError("n_decisions must be >= 1")
    states = benchmark_states(env_config, n_states, seed)
    agent.reset_episode(seed)
    agent.decide(states[0])  # warm-up
    with torch.no_grad():
        started = time.perf_counter()
        for i in range(n_decisions):
            agent.decide(states[i % len(states)])
        elapsed = time.perf_counter() - started
    return elapsed / n_decisions


def run_bench(config: ExperimentConfig, out_dir: Optional[PathLike] = None) -> float:
    out = _prepare(out_dir, config)
    env_config = config.env_config()
    if config.agent in VARIANTS and not config.checkpoint:
        agent = EATScheduler.untrained(env_config, variant=config.agent, random_state=config.seed,
                                       T=config.T, hidden=config.hidden)
    elif config.agent in ("genetic", "harmony") and not config.sequence:
        # decision cost does not depend on the genome, so skip the search
        agent = make_scheduler(config.agent, **config.estimator_params())
        agent.env_config_ = env_config
        rng = np.random.default_rng(config.seed)
        agent.sequence_ = rng.random((config.sequence_length, env_config.action_dim))
    else:
        agent = build_agent(config, env_config)
    seconds = measure_decision_latency(agent, env_config, config.bench_decisions, config.bench_states,
                                       config.eval_seed)
    write_timing_csv(out / "timing.csv", [{"agent": config.agent, "decisions": config.bench_decisions,
                                           "seconds_per_decision": seconds}])
    return seconds
