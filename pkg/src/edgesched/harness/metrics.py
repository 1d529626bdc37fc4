"""Evaluation metrics and their CSV/JSONL serializations.

Metrics pool tasks across episodes: quality and reload rate average over
scheduled tasks, latency averages over every arrived task.  A task that
arrived but was never scheduled counts with a censored latency
(episode end minus arrival).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

METRICS_COLUMNS = ("agent", "scope", "seed", "episodes", "arrived", "scheduled", "mean_quality",
                   "mean_latency", "reload_rate", "efficiency", "mean_reward")
CURVE_COLUMNS = ("episode", "steps", "reward", "mean_latency", "reload_rate", "mean_quality",
                 "actor_loss", "critic_loss1", "critic_loss2")


@dataclass
class EpisodeTally:
    """Raw per-task sums for one episode, enough to pool exactly."""

    seed: int
    qualities: List[float] = field(default_factory=list)
    latencies: List[float] = field(default_factory=list)
    reloads: int = 0
    reward: float = 0.0

    @property
    def scheduled(self) -> int:
        return len(self.qualities)

    @property
    def arrived(self) -> int:
        return len(self.latencies)


@dataclass
class MetricsReport:
    mean_quality: Optional[float]
    mean_latency: Optional[float]
    reload_rate: Optional[float]
    episodes: int
    arrived: int
    scheduled: int
    mean_reward: float
    decision_latency: Optional[float] = None

    @property
    def efficiency(self) -> Optional[float]:
        if self.mean_quality is None or not self.mean_latency:
            return None
        return self.mean_quality / self.mean_latency

    def as_dict(self) -> dict:
        out = asdict(self)
        out["efficiency"] = self.efficiency
        return out


def _mean(values: Sequence[float]) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def pool(tallies: Sequence[EpisodeTally]) -> MetricsReport:
    qualities = [q for t in tallies for q in t.qualities]
    latencies = [x for t in tallies for x in t.latencies]
    scheduled = len(qualities)
    return MetricsReport(
        mean_quality=_mean(qualities),
        mean_latency=_mean(latencies),
        reload_rate=sum(t.reloads for t in tallies) / scheduled if scheduled else None,
        episodes=len(tallies),
        arrived=len(latencies),
        scheduled=scheduled,
        mean_reward=_mean([t.reward for t in tallies]) or 0.0,
    )


def tally_env(env, seed: int) -> EpisodeTally:
    """Per-task numbers of a finished episode, read off the environment."""
    recs = sorted(env.records.values(), key=lambda r: r.task_id)
    tally = EpisodeTally(seed)
    tally.qualities = [r.quality for r in recs]
    tally.latencies = [r.response_time for r in recs] + [env.now - t.arrival_time for t in env.queue]
    tally.reloads = sum(not r.reuse for r in recs)
    tally.reward = math.fsum(r.reward for r in recs)
    return tally


def tallies_from_trace(events: Iterable[dict]) -> List[EpisodeTally]:
    """Rebuild per-episode tallies from trace events alone."""
    episodes: Dict[int, dict] = {}
    for ev in events:
        ep = episodes.setdefault(ev["episode"], {"seed": ev["seed"], "arrivals": {}, "scheduled": [], "end": None})
        kind = ev["event"]
        if kind == "arrival":
            ep["arrivals"][ev["task"]] = ev["time"]
        elif kind == "schedule":
            ep["scheduled"].append(ev)
        elif kind == "end":
            ep["end"] = ev["time"]
    out = []
    for _, ep in sorted(episodes.items()):
        tally = EpisodeTally(ep["seed"])
        done = set()
        for ev in sorted(ep["scheduled"], key=lambda e: e["task"]):
            tally.qualities.append(ev["quality"])
            tally.latencies.append(ev["wait"] + ev["init"] + ev["exec"])
            tally.reloads += not ev["reuse"]
            done.add(ev["task"])
        tally.reward = math.fsum(ev["reward"] for ev in ep["scheduled"])
        for task, arrival in ep["arrivals"].items():
            if task not in done:
                tally.latencies.append(ep["end"] - arrival)
        out.append(tally)
    return out


# -- files -------------------------------------------------------------------


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path: Union[str, Path], agent: str, tallies: Sequence[EpisodeTally],
                      report: MetricsReport) -> None:
    """One row per evaluation episode, then a pooled ``all`` row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        rows = [(str(t.seed), pool([t])) for t in tallies] + [("", report)]
        for seed, rep in rows:
            scope = "episode" if seed else "all"
            writer.writerow([agent, scope, seed, rep.episodes, rep.arrived, rep.scheduled,
                             _cell(rep.mean_quality), _cell(rep.mean_latency), _cell(rep.reload_rate),
                             _cell(rep.efficiency), _cell(rep.mean_reward)])


def read_metrics_csv(path: Union[str, Path]) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_curves_csv(path: Union[str, Path], history: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for row in history:
            writer.writerow([_cell(row.get(c)) for c in CURVE_COLUMNS])


def write_timing_csv(path: Union[str, Path], rows: Sequence[dict]) -> None:
    """Wall-clock measurements, kept apart so other outputs stay byte-stable."""
    if not rows:
        return
    columns = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def write_trace(path: Union[str, Path], events: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")


def read_trace(path: Union[str, Path]) -> List[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
