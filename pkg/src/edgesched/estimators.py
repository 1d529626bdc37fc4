"""Schedulers as scikit-learn style estimators.

``fit(env_config)`` trains or optimizes against an environment
configuration, ``decide(env)`` returns the next Decision for a live
environment, and ``predict(X)`` maps a batch of raw states to action
vectors where the agent is state-driven.  Hyperparameters live in
``__init__`` so ``get_params``/``set_params``/``clone`` work as usual.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import baselines
from .core import Decision, decode_action, normalize_state
from .env import EdgeClusterEnv, EnvConfig
from .nn import DTYPE, load_checkpoint, save_checkpoint
from .policy import VARIANTS, ActorNet
from .trainer import SACTrainer, TrainConfig
from .validation import check_env_config, check_states


class SchedulerMixin:
    """Episode-level helpers shared by every scheduler."""

    def reset_episode(self, seed: int) -> None:
        """Re-seed any per-episode randomness before an evaluation episode."""

    def decide(self, env: EdgeClusterEnv) -> Decision:  # pragma: no cover - interface
        raise NotImplementedError

    def run_episode(self, env: EdgeClusterEnv, seed: int) -> dict:
        env.reset(seed=seed)
        self.reset_episode(seed)
        while not env.done:
            env.step(self.decide(env))
        return env.episode_metrics()


class EATScheduler(SchedulerMixin, BaseEstimator):
    """Diffusion-policy SAC scheduler and its ablations (``variant``)."""

    def __init__(self, variant: str = "eat", episodes: int = 5000, updates_per_episode: int = 1,
                 batch_size: int = 512, lr_actor: float = 3e-4, lr_critic: float = 3e-4,
                 alpha: float = 0.05, tau: float = 0.005, gamma: float = 0.95, weight_decay: float = 1e-4,
                 T: int = 10, hidden: int = 256, squash_correction: bool = False, deterministic: bool = True,
                 random_state: int = 0):
        self.variant = variant
        self.episodes = episodes
        self.updates_per_episode = updates_per_episode
        self.batch_size = batch_size
        self.lr_actor = lr_actor
        self.lr_critic = lr_critic
        self.alpha = alpha
        self.tau = tau
        self.gamma = gamma
        self.weight_decay = weight_decay
        self.T = T
        self.hidden = hidden
        self.squash_correction = squash_correction
        self.deterministic = deterministic
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        return TrainConfig(lr_actor=self.lr_actor, lr_critic=self.lr_critic, alpha=self.alpha, tau=self.tau,
                           batch_size=self.batch_size, gamma=self.gamma, episodes=self.episodes,
                           weight_decay=self.weight_decay, updates_per_episode=self.updates_per_episode,
                           hidden=self.hidden, T=self.T, variant=self.variant,
                           squash_correction=self.squash_correction)

    def fit(self, env_config: Optional[EnvConfig] = None, callback=None):
        self.env_config_ = check_env_config(env_config)
        self.trainer_ = SACTrainer(self.env_config_, self.train_config(), seed=self.random_state)
        self.trainer_.train(callback=callback)
        self.actor_ = self.trainer_.actor
        self.history_ = self.trainer_.history
        self._generator = torch.Generator().manual_seed(self.random_state)
        return self

    def reset_episode(self, seed: int) -> None:
        self._generator = torch.Generator().manual_seed(int(seed))

    def predict(self, X) -> np.ndarray:
        """Action vectors for raw (unnormalized) states."""
        check_is_fitted(self, "actor_")
        cfg = self.env_config_
        X = check_states(X, cfg.n_servers, cfg.queue_window)
        Xn = np.stack([normalize_state(x, cfg.n_servers, cfg.time_scale) for x in X])
        return self.actor_.act(Xn, self._generator, self.deterministic)

    def decide(self, env: EdgeClusterEnv) -> Decision:
        check_is_fitted(self, "actor_")
        cfg = env.config
        a = self.actor_.act(env.observe_normalized(), self._generator, self.deterministic)
        return decode_action(a, len(env.queue), cfg.s_min, cfg.s_max)

    def save(self, path) -> None:
        check_is_fitted(self, "actor_")
        save_checkpoint(path, self.trainer_.state_tensors(), self.trainer_.checkpoint_meta())

    @classmethod
    def load(cls, path, env_config: EnvConfig, deterministic: bool = True) -> "EATScheduler":
        tensors, meta = load_checkpoint(path)
        arch = meta["actor"]
        if (arch["n_servers"], arch["queue_window"]) != (env_config.n_servers, env_config.queue_window):
            raise ValueError("checkpoint was trained for a different cluster size or queue window")
        train = meta["train"]
        est = cls(variant=train["variant"], T=arch["T"], hidden=arch["hidden"],
                  squash_correction=train.get("squash_correction", False), deterministic=deterministic,
                  random_state=meta["seed"])
        actor = ActorNet(arch["n_servers"], arch["queue_window"], T=arch["T"], hidden=arch["hidden"],
                         use_attention=arch["use_attention"], use_diffusion=arch["use_diffusion"],
                         x0_form=arch["x0_form"])
        actor.load_state_dict({k[len("actor."):]: v for k, v in tensors.items() if k.startswith("actor.")})
        est.actor_ = actor
        est.env_config_ = env_config
        est._generator = torch.Generator().manual_seed(meta["seed"])
        return est

    @classmethod
    def untrained(cls, env_config: EnvConfig, variant: str = "eat", random_state: int = 0, **kwargs):
        """An initialized but untrained scheduler (0 training episodes)."""
        return cls(variant=variant, episodes=0, random_state=random_state, **kwargs).fit(env_config)


class GreedyScheduler(SchedulerMixin, BaseEstimator):
    """Exhaustive one-step look-ahead on the immediate reward."""

    def fit(self, env_config: Optional[EnvConfig] = None):
        self.env_config_ = check_env_config(env_config)
        return self

    def decide(self, env: EdgeClusterEnv) -> Decision:
        return baselines.greedy_decide(env)


class RandomScheduler(SchedulerMixin, BaseEstimator):
    def __init__(self, random_state: int = 0):
        self.random_state = random_state

    def fit(self, env_config: Optional[EnvConfig] = None):
        self.env_config_ = check_env_config(env_config)
        self.rng_ = np.random.default_rng(self.random_state)
        return self

    def reset_episode(self, seed: int) -> None:
        self.rng_ = np.random.default_rng([self.random_state, int(seed)])

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "rng_")
        cfg = self.env_config_
        X = check_states(X, cfg.n_servers, cfg.queue_window)
        return self.rng_.random((len(X), cfg.action_dim))

    def decide(self, env: EdgeClusterEnv) -> Decision:
        return baselines.random_decide(env, self.rng_)


class _SequenceScheduler(SchedulerMixin, BaseEstimator):
    """Plays back a fixed open-loop action sequence, indexed by decision count."""

    def decide(self, env: EdgeClusterEnv) -> Decision:
        check_is_fitted(self, "sequence_")
        cfg = env.config
        if env.decisions >= len(self.sequence_):
            return Decision.noop()
        return decode_action(self.sequence_[env.decisions], len(env.queue), cfg.s_min, cfg.s_max)

    def save(self, path) -> None:
        baselines.save_sequence(path, self.sequence_)

    def load_sequence(self, path, env_config: Optional[EnvConfig] = None):
        self.env_config_ = check_env_config(env_config)
        self.sequence_ = baselines.load_sequence(path)
        return self


class GeneticScheduler(_SequenceScheduler):
    def __init__(self, population: int = 64, generations: int = 32, parents: int = 10,
                 crossover_prob: float = 1.0, mutation_prob: float = 0.1, elites: int = 1,
                 length: int = baselines.SEQUENCE_LENGTH, random_state: int = 0):
        self.population = population
        self.generations = generations
        self.parents = parents
        self.crossover_prob = crossover_prob
        self.mutation_prob = mutation_prob
        self.elites = elites
        self.length = length
        self.random_state = random_state

    def fit(self, env_config: Optional[EnvConfig] = None):
        self.env_config_ = check_env_config(env_config)
        cfg = baselines.GeneticConfig(self.population, self.generations, self.parents, self.crossover_prob,
                                      self.mutation_prob, self.elites, length=self.length)
        result = baselines.genetic_optimize(self.env_config_, self.random_state, cfg)
        self.sequence_, self.best_fitness_, self.history_ = result.best, result.best_fitness, result.history
        return self


class HarmonyScheduler(_SequenceScheduler):
    def __init__(self, improvisations: int = 64, memory: int = 64, memory_consideration: float = 0.8,
                 pitch_adjust: float = 0.2, bandwidth: float = 0.1, length: int = baselines.SEQUENCE_LENGTH,
                 random_state: int = 0):
        self.improvisations = improvisations
        self.memory = memory
        self.memory_consideration = memory_consideration
        self.pitch_adjust = pitch_adjust
        self.bandwidth = bandwidth
        self.length = length
        self.random_state = random_state

    def fit(self, env_config: Optional[EnvConfig] = None):
        self.env_config_ = check_env_config(env_config)
        cfg = baselines.HarmonyConfig(self.improvisations, self.memory, self.memory_consideration,
                                      self.pitch_adjust, self.bandwidth, self.length)
        result = baselines.harmony_optimize(self.env_config_, self.random_state, cfg)
        self.sequence_, self.best_fitness_, self.history_ = result.best, result.best_fitness, result.history
        return self


def make_scheduler(agent: str, **params):
    agent = agent.lower()
    if agent in VARIANTS:
        return EATScheduler(variant=agent, **params)
    table = {"greedy": GreedyScheduler, "random": RandomScheduler,
             "genetic": GeneticScheduler, "harmony": HarmonyScheduler}
    if agent not in table:
        raise ValueError(f"unknown agent {agent!r}")
    return table[agent](**params)
