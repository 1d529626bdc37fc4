"""Comparison schedulers: greedy, random, genetic algorithm, harmony search."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Union

import numpy as np

from .core import Decision, decode_action
from .env import EdgeClusterEnv, EnvConfig

SEQUENCE_LENGTH = 2048


def greedy_candidates(env: EdgeClusterEnv) -> List[Decision]:
    cfg = env.config
    visible = min(len(env.queue), cfg.queue_window)
    out = [Decision.noop()]
    for i in range(visible):
        for s in range(cfg.s_min, cfg.s_max + 1):
            out.append(Decision.schedule(i, s))
    return out


def greedy_decide(env: EdgeClusterEnv) -> Decision:
    """Best immediate reward over NoOp and every (task, steps) pair.

    Candidates are scored on cloned environments.  Ties keep the earlier
    candidate: NoOp, then lower task index, then fewer steps.
    """
    best, best_score = None, -np.inf
    for cand in greedy_candidates(env):
        score = env.preview_reward(cand)
        if score > best_score:
            best, best_score = cand, score
    return best


def random_action(rng: np.random.Generator, action_dim: int) -> np.ndarray:
    return rng.random(action_dim)


def random_decide(env: EdgeClusterEnv, rng: np.random.Generator) -> Decision:
    cfg = env.config
    return decode_action(random_action(rng, cfg.action_dim), len(env.queue), cfg.s_min, cfg.s_max)


# ---------------------------------------------------------------------------
# open-loop action sequences


def run_sequence(env_config: EnvConfig, sequence: np.ndarray, seed: int,
                 env: Optional[EdgeClusterEnv] = None) -> float:
    """Replay ``sequence`` open-loop on a seeded episode; return total reward."""
    env = env or EdgeClusterEnv(env_config)
    env.reset(seed=seed)
    total, t = 0.0, 0
    while not env.done:
        if t < len(sequence):
            d = decode_action(sequence[t], len(env.queue), env_config.s_min, env_config.s_max)
        else:
            d = Decision.noop()
        total += env.step(d).reward
        t += 1
    return total


def save_sequence(path: Union[str, Path], sequence: np.ndarray) -> None:
    Path(path).write_text(json.dumps(np.asarray(sequence).tolist()))


def load_sequence(path: Union[str, Path]) -> np.ndarray:
    seq = np.asarray(json.loads(Path(path).read_text()), dtype=float)
    if seq.ndim != 2 or np.any(seq < 0) or np.any(seq > 1):
        raise ValueError("sequence must be a 2-D array of values in [0, 1]")
    return seq


@dataclass(frozen=True)
class GeneticConfig:
    population: int = 64
    generations: int = 32
    parents: int = 10
    crossover_prob: float = 1.0
    mutation_prob: float = 0.1
    elites: int = 1
    tournament: int = 3
    length: int = SEQUENCE_LENGTH


@dataclass(frozen=True)
class HarmonyConfig:
    improvisations: int = 64
    memory: int = 64
    memory_consideration: float = 0.8
    pitch_adjust: float = 0.2
    # one unit on the raw gene scale, i.e. 0.1 on the normalized [0, 1] genes
    bandwidth: float = 0.1
    length: int = SEQUENCE_LENGTH


@dataclass
class OptimizeResult:
    best: np.ndarray
    best_fitness: float
    history: List[dict]


def _fitness_fn(env_config: EnvConfig, seed: int) -> Callable[[np.ndarray], float]:
    env = EdgeClusterEnv(env_config)
    return lambda genome: run_sequence(env_config, genome, seed, env)


def genetic_optimize(env_config: EnvConfig, seed: int = 0, config: GeneticConfig = GeneticConfig(),
                     fitness_seed: Optional[int] = None) -> OptimizeResult:
    """Evolve open-loop action sequences against one fixed episode seed."""
    rng = np.random.default_rng(seed)
    fitness = _fitness_fn(env_config, seed if fitness_seed is None else fitness_seed)
    shape = (config.length, env_config.action_dim)
    pop = [rng.random(shape) for _ in range(config.population)]
    scores = np.array([fitness(g) for g in pop])
    history = [{"generation": 0, "best": float(scores.max()), "mean": float(scores.mean())}]

    for gen in range(1, config.generations + 1):
        order = np.argsort(-scores, kind="stable")
        elites = [pop[i] for i in order[:config.elites]]
        parents = []
        for _ in range(config.parents):
            entrants = rng.choice(len(pop), size=config.tournament, replace=False)
            parents.append(pop[max(entrants, key=lambda i: scores[i])])
        children = []
        while len(children) < config.population - len(elites):
            a, b = rng.choice(len(parents), size=2, replace=False)
            child = parents[a].copy()
            if rng.random() < config.crossover_prob:
                cut = rng.integers(1, config.length)
                child[cut:] = parents[b][cut:]
            mask = rng.random(shape) < config.mutation_prob
            child[mask] = rng.random(int(mask.sum()))
            children.append(child)
        pop = elites + children
        scores = np.concatenate([scores[order[:config.elites]], [fitness(g) for g in children]])
        history.append({"generation": gen, "best": float(scores.max()), "mean": float(scores.mean())})

    best = int(np.argmax(scores))
    return OptimizeResult(pop[best], float(scores[best]), history)


def harmony_optimize(env_config: EnvConfig, seed: int = 0, config: HarmonyConfig = HarmonyConfig(),
                     fitness_seed: Optional[int] = None) -> OptimizeResult:
    """Harmony search over open-loop action sequences."""
    rng = np.random.default_rng(seed)
    fitness = _fitness_fn(env_config, seed if fitness_seed is None else fitness_seed)
    shape = (config.length, env_config.action_dim)
    memory = np.stack([rng.random(shape) for _ in range(config.memory)])
    scores = np.array([fitness(g) for g in memory])
    history = [{"improvisation": 0, "best": float(scores.max()), "worst": float(scores.min())}]
    rows = np.arange(shape[0])[:, None]
    cols = np.arange(shape[1])[None, :]

    for it in range(1, config.improvisations + 1):
        new = rng.random(shape)
        consider = rng.random(shape) < config.memory_consideration
        donors = rng.integers(config.memory, size=shape)
        recalled = memory[donors, rows, cols]
        adjust = consider & (rng.random(shape) < config.pitch_adjust)
        recalled = np.where(adjust, recalled + config.bandwidth * rng.uniform(-1, 1, shape), recalled)
        new = np.clip(np.where(consider, recalled, new), 0.0, 1.0)
        score = fitness(new)
        worst = int(np.argmin(scores))
        if score > scores[worst]:
            memory[worst], scores[worst] = new, score
        history.append({"improvisation": it, "best": float(scores.max()), "worst": float(scores.min())})

    best = int(np.argmax(scores))
    return OptimizeResult(memory[best].copy(), float(scores[best]), history)
