"""Twin-critic soft actor-critic training for the diffusion actor."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
import torch
from torch import nn

from .core import decode_action
from .env import EdgeClusterEnv, EnvConfig
from .nn import DTYPE, DenseNet, adam_step, make_adam
from .policy import ActorNet, build_actor, gaussian_entropy, squash_log_jacobian

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    alpha: float = 0.05
    tau: float = 0.005
    batch_size: int = 512
    gamma: float = 0.95
    episodes: int = 5000
    weight_decay: float = 1e-4
    buffer_capacity: int = 1_000_000
    updates_per_episode: int = 1
    hidden: int = 256
    T: int = 10
    variant: str = "eat"
    # add the tanh change-of-variables term to the entropy bonus
    squash_correction: bool = False

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.batch_size < 1 or self.updates_per_episode < 0 or self.episodes < 0:
            raise ValueError("batch_size must be >= 1; episodes and updates_per_episode >= 0")


class ReplayBuffer:
    """Fixed-capacity ring buffer; the oldest transitions are overwritten first."""

    def __init__(self, capacity: int, state_shape, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.state_shape = tuple(state_shape)
        self.action_dim = action_dim
        self._alloc = 0
        self.size = 0
        self._next = 0
        self.inserted = 0
        self._grow(min(self.capacity, 1024))

    def _grow(self, n: int):
        def grow(arr, shape):
            new = np.zeros((n, *shape))
            if arr is not None:
                new[:self._alloc] = arr
            return new

        self.states = grow(getattr(self, "states", None), self.state_shape)
        self.next_states = grow(getattr(self, "next_states", None), self.state_shape)
        self.actions = grow(getattr(self, "actions", None), (self.action_dim,))
        self.rewards = grow(getattr(self, "rewards", None), ())
        self.terminals = grow(getattr(self, "terminals", None), ())
        self._alloc = n

    def __len__(self) -> int:
        return self.size

    def add(self, state, action, next_state, reward: float, terminal: bool = False):
        if self._next >= self._alloc:
            self._grow(min(self.capacity, 2 * self._alloc))
        i = self._next
        self.states[i], self.actions[i], self.next_states[i] = state, action, next_state
        self.rewards[i], self.terminals[i] = reward, float(terminal)
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.inserted += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> Dict[str, torch.Tensor]:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.choice(self.size, size=min(batch_size, self.size), replace=False)
        return {
            "state": torch.as_tensor(self.states[idx], dtype=DTYPE),
            "action": torch.as_tensor(self.actions[idx], dtype=DTYPE),
            "next_state": torch.as_tensor(self.next_states[idx], dtype=DTYPE),
            "reward": torch.as_tensor(self.rewards[idx], dtype=DTYPE),
            "terminal": torch.as_tensor(self.terminals[idx], dtype=DTYPE),
        }


class Critic(nn.Module):
    """Q(s, a) on the flattened normalized state concatenated with the action."""

    def __init__(self, state_dim: int, action_dim: int, hidden: int = 256, generator=None):
        super().__init__()
        self.net = DenseNet([state_dim + action_dim, hidden, hidden, 1], generator=generator)

    def forward(self, state: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([state.flatten(-2), action], dim=-1)).squeeze(-1)


class SACTrainer:
    def __init__(self, env_config: EnvConfig = EnvConfig(), config: TrainConfig = TrainConfig(),
                 seed: int = 0, actor: Optional[ActorNet] = None):
        self.env_config, self.config, self.seed = env_config, config, seed
        torch_gen = torch.Generator().manual_seed(seed)
        self.generator = torch.Generator().manual_seed(seed + 1)
        self.rng = np.random.default_rng(seed)
        n_pos = env_config.n_servers + env_config.queue_window
        d = env_config.action_dim
        self.actor = actor or build_actor(config.variant, env_config.n_servers, env_config.queue_window,
                                          seed=seed, T=config.T, hidden=config.hidden)
        self.q1 = Critic(3 * n_pos, d, config.hidden, torch_gen)
        self.q2 = Critic(3 * n_pos, d, config.hidden, torch_gen)
        self.q1_target = copy.deepcopy(self.q1).requires_grad_(False)
        self.q2_target = copy.deepcopy(self.q2).requires_grad_(False)
        self.actor_opt = make_adam(self.actor.parameters(), config.lr_actor, config.weight_decay)
        self.q1_opt = make_adam(self.q1.parameters(), config.lr_critic, config.weight_decay)
        self.q2_opt = make_adam(self.q2.parameters(), config.lr_critic, config.weight_decay)
        self.buffer = ReplayBuffer(config.buffer_capacity, env_config.state_shape, d)
        self.env = EdgeClusterEnv(env_config)
        self.history: List[dict] = []
        self.wall_times: List[float] = []

    # -- losses and updates --------------------------------------------------

    def critic_min(self, state: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return torch.minimum(self.q1(state, action), self.q2(state, action))

    def critic_target(self, batch) -> torch.Tensor:
        with torch.no_grad():
            next_action, _, _ = self.actor(batch["next_state"], self.generator)
            next_q = torch.minimum(self.q1_target(batch["next_state"], next_action),
                                   self.q2_target(batch["next_state"], next_action))
            return batch["reward"] + self.config.gamma * (1.0 - batch["terminal"]) * next_q

    def critic_update(self, batch, target: Optional[torch.Tensor] = None):
        if batch["state"].shape[0] == 0:
            raise ValueError("empty batch")
        if target is None:
            target = self.critic_target(batch)
        losses = []
        for q, opt in ((self.q1, self.q1_opt), (self.q2, self.q2_opt)):
            opt.zero_grad()
            loss = ((q(batch["state"], batch["action"]) - target) ** 2).mean()
            loss.backward()
            adam_step(opt)
            losses.append(loss.item())
        return tuple(losses)

    def actor_loss(self, state: torch.Tensor) -> torch.Tensor:
        action, u, _, logvar = self.actor.sample(state, self.generator)
        entropy = gaussian_entropy(logvar)
        if self.config.squash_correction:
            entropy = entropy + squash_log_jacobian(u)
        return -(self.critic_min(state, action) + self.config.alpha * entropy).mean()

    def actor_update(self, batch) -> float:
        self.actor_opt.zero_grad()
        loss = self.actor_loss(batch["state"])
        loss.backward()
        adam_step(self.actor_opt)
        # critic grads picked up here are discarded before the critic step
        self.q1.zero_grad()
        self.q2.zero_grad()
        return loss.item()

    def soft_update(self, tau: Optional[float] = None):
        tau = self.config.tau if tau is None else tau
        with torch.no_grad():
            for live, target in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
                for p, tp in zip(live.parameters(), target.parameters()):
                    tp.mul_(1 - tau).add_(p, alpha=tau)

    # -- rollout / training --------------------------------------------------

    def episode_seed(self, episode: int) -> int:
        return int(np.random.SeedSequence([self.seed, episode]).generate_state(1)[0])

    def rollout(self, episode: int) -> dict:
        cfg = self.env_config
        env = self.env
        env.reset(seed=self.episode_seed(episode))
        state = env.observe_normalized()
        total, steps = 0.0, 0
        while not env.done:
            action = self.actor.act(state, self.generator)
            out = env.step(decode_action(action, len(env.queue), cfg.s_min, cfg.s_max))
            next_state = env.observe_normalized()
            terminal = out.done and env.now < cfg.arrival.time_limit and env.decisions < cfg.arrival.decision_limit
            self.buffer.add(state, action, next_state, out.reward, terminal)
            state = next_state
            total += out.reward
            steps += 1
        metrics = env.episode_metrics()
        return {"steps": steps, "reward": total, "mean_latency": metrics["mean_latency"],
                "reload_rate": metrics["reload_rate"], "mean_quality": metrics["mean_quality"]}

    def update(self) -> tuple:
        batch = self.buffer.sample(self.config.batch_size, self.rng)
        actor_loss = self.actor_update(batch)
        c1, c2 = self.critic_update(batch)
        self.soft_update()
        return actor_loss, c1, c2

    def train(self, episodes: Optional[int] = None,
              callback: Optional[Callable[[dict], None]] = None) -> ActorNet:
        episodes = self.config.episodes if episodes is None else episodes
        start = time.perf_counter()
        first = len(self.history)
        for episode in range(first, first + episodes):
            row = {"episode": episode}
            row.update(self.rollout(episode))
            losses = [self.update() for _ in range(self.config.updates_per_episode)]
            if losses:
                row["actor_loss"], row["critic_loss1"], row["critic_loss2"] = losses[-1]
            else:
                row["actor_loss"] = row["critic_loss1"] = row["critic_loss2"] = float("nan")
            self.history.append(row)
            self.wall_times.append(time.perf_counter() - start)
            if callback is not None:
                callback(row)
            if episode % 100 == 0:
                log.info("episode %d reward %.3f latency %.1f", episode, row["reward"], row["mean_latency"])
        return self.actor

    # -- persistence ---------------------------------------------------------

    def state_tensors(self) -> dict:
        tensors = {f"actor.{k}": v for k, v in self.actor.state_dict().items()}
        for name in ("q1", "q2", "q1_target", "q2_target"):
            tensors.update({f"{name}.{k}": v for k, v in getattr(self, name).state_dict().items()})
        return tensors

    def checkpoint_meta(self) -> dict:
        return {"actor": self.actor.config_dict(), "train": asdict(self.config), "seed": self.seed}
