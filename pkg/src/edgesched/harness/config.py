"""Flat ``key = value`` experiment configuration.

Lines starting with ``#`` are comments.  Every key maps to one field of
:class:`ExperimentConfig`; unknown keys are rejected so typos surface
early.  ``--set key=value`` overrides on the command line use the same
parser.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Union

from ..env import ArrivalConfig, EnvConfig, RewardParams
from ..policy import VARIANTS

AGENTS = tuple(VARIANTS) + ("greedy", "random", "genetic", "harmony")
GRID_RATES = {4: 0.05, 8: 0.1, 12: 0.15}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    agent: str = "eat"
    n_servers: int = 4
    # None means "use the evaluation-grid rate for n_servers"
    rate: Optional[float] = None
    queue_window: int = 5
    s_min: int = 10
    s_max: int = 50
    tasks_per_episode: int = 32
    time_limit: float = 1024.0
    decision_limit: int = 1024
    min_decision_interval: float = 1.0
    # reward coefficients
    alpha_q: float = 1.0
    beta_t: float = 0.01
    mu_t: float = 0.01
    lambda_q: float = 1.0
    q_min: float = 2.3
    p_quality: float = 1.0
    # seeds
    seed: int = 0
    eval_seed: int = 10_000
    eval_episodes: int = 20
    # training
    episodes: int = 5000
    updates_per_episode: int = 1
    batch_size: int = 512
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    alpha: float = 0.05
    tau: float = 0.005
    gamma: float = 0.95
    weight_decay: float = 1e-4
    T: int = 10
    hidden: int = 256
    squash_correction: bool = False
    deterministic: bool = True
    # metaheuristics
    population: int = 64
    generations: int = 32
    improvisations: int = 64
    memory: int = 64
    sequence_length: int = 2048
    # artifacts
    checkpoint: str = ""
    sequence: str = ""
    bench_decisions: int = 1000
    bench_states: int = 50

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise ConfigError(f"agent must be one of {', '.join(AGENTS)}; got {self.agent!r}")
        if self.n_servers < 1:
            raise ConfigError("n_servers must be >= 1")
        if self.rate is None and self.n_servers not in GRID_RATES:
            raise ConfigError(f"no default rate for {self.n_servers} servers; set rate explicitly")
        if self.eval_episodes < 0 or self.bench_decisions < 1 or self.bench_states < 1:
            raise ConfigError("eval_episodes must be >= 0; bench sizes must be >= 1")

    @property
    def arrival_rate(self) -> float:
        return GRID_RATES[self.n_servers] if self.rate is None else self.rate

    @property
    def eval_seeds(self) -> List[int]:
        return [self.eval_seed + i for i in range(self.eval_episodes)]

    def env_config(self) -> EnvConfig:
        try:
            return EnvConfig(
                n_servers=self.n_servers,
                queue_window=self.queue_window,
                s_min=self.s_min,
                s_max=self.s_max,
                arrival=ArrivalConfig(rate=self.arrival_rate, tasks_per_episode=self.tasks_per_episode,
                                      time_limit=self.time_limit, decision_limit=self.decision_limit),
                reward=RewardParams(alpha_q=self.alpha_q, beta_t=self.beta_t, mu_t=self.mu_t,
                                    lambda_q=self.lambda_q, q_min=self.q_min, p_quality=self.p_quality),
                min_decision_interval=self.min_decision_interval,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def estimator_params(self) -> dict:
        if self.agent in VARIANTS:
            return dict(episodes=self.episodes, updates_per_episode=self.updates_per_episode,
                        batch_size=self.batch_size, lr_actor=self.lr_actor, lr_critic=self.lr_critic,
                        alpha=self.alpha, tau=self.tau, gamma=self.gamma, weight_decay=self.weight_decay,
                        T=self.T, hidden=self.hidden, squash_correction=self.squash_correction,
                        deterministic=self.deterministic,
                        random_state=self.seed)
        if self.agent == "random":
            return dict(random_state=self.seed)
        if self.agent == "genetic":
            return dict(population=self.population, generations=self.generations,
                        length=self.sequence_length, random_state=self.seed)
        if self.agent == "harmony":
            return dict(improvisations=self.improvisations, memory=self.memory,
                        length=self.sequence_length, random_state=self.seed)
        return {}

    # -- text form -----------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if value is None else _format(value)}")
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text())

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(name: str, raw: str):
    field_types = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in field_types:
        raise ConfigError(f"unknown config key {name!r}")
    kind = field_types[name]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "Optional[float]":
            return None if raw in ("", "none", "None") else float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_pairs(pairs: Iterable[str]) -> dict:
    """Parse ``key=value`` strings into typed field values."""
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        out[key] = _coerce(key, value)
    return out


def parse_text(text: str) -> dict:
    pairs = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            pairs.append(line)
    return parse_pairs(pairs)


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Union[Iterable[str], Mapping]] = None) -> ExperimentConfig:
    values = parse_text(Path(path).read_text()) if path else {}
    if overrides:
        values.update(overrides if isinstance(overrides, Mapping) else parse_pairs(overrides))
    return ExperimentConfig(**values)
