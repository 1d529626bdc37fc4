"""Attention-guided diffusion actor.

The actor turns a state into an action in three stages: self-attention
over the state columns yields a feature vector ``f_s``; a reverse
diffusion chain conditioned on ``f_s`` denoises Gaussian noise into an
action mean ``x0``; a linear variance head maps ``x0`` to per-coordinate
log-variances, and the sampled action is squashed into [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .nn import DTYPE, DenseNet, attention, init_uniform_, mish

TIME_EMBED_DIM = 16
LOGVAR_MIN, LOGVAR_MAX = -10.0, 1.0
# keeps the squashed action strictly inside (0, 1) even when tanh rounds to 1.0
_SQUASH = 1.0 - 1e-6


class DiffusionSchedule:
    """Variance schedule indexed 1..T, with ``alpha_bar[0] == 1``."""

    def __init__(self, T: int = 10, beta_min: float = 1e-4, beta_max: float = 0.2, kind: str = "linear"):
        if T < 1:
            raise ValueError("T must be >= 1")
        self.T, self.kind = T, kind
        if kind == "linear":
            betas = np.linspace(beta_min, beta_max, T) if T > 1 else np.array([beta_min])
        elif kind == "cosine":
            s = 0.008
            steps = np.arange(T + 1) / T
            f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
            abar = f / f[0]
            betas = np.clip(1 - abar[1:] / abar[:-1], 1e-6, 0.999)
        else:
            raise ValueError(f"unknown schedule kind {kind!r}")
        self.betas = np.concatenate([[0.0], betas])
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.cumprod(self.alphas)
        if not np.all((betas > 0) & (betas < 1)):
            raise ValueError("betas must lie in (0, 1)")

    def posterior_variance(self, i: int) -> float:
        """beta_i (1 - abar_{i-1}) / (1 - abar_i); exactly 0 at i = 1."""
        return float(self.betas[i] * (1 - self.alpha_bar[i - 1]) / (1 - self.alpha_bar[i]))


def sinusoidal_table(n: int, dim: int = TIME_EMBED_DIM) -> torch.Tensor:
    pos = np.arange(n)[:, None]
    freq = 10000.0 ** (-np.arange(0, dim, 2) / dim)
    table = np.zeros((n, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return torch.tensor(table, dtype=DTYPE)


def gaussian_entropy(logvar: torch.Tensor) -> torch.Tensor:
    """0.5 * sum_j log(2 pi e sigma_j^2) over the last dimension."""
    return 0.5 * (math.log(2 * math.pi * math.e) + logvar).sum(dim=-1)


def squash(u: torch.Tensor) -> torch.Tensor:
    return 0.5 * (1.0 + _SQUASH * torch.tanh(u))


def squash_log_jacobian(u: torch.Tensor) -> torch.Tensor:
    """sum_j log |d squash(u_j) / d u_j|, stable for large |u|."""
    a = u.abs()  # log sech^2 is even; this branch avoids cancellation
    log_sech2 = 2.0 * (math.log(2.0) - a - F.softplus(-2.0 * a))
    return (math.log(0.5 * _SQUASH) + log_sech2).sum(dim=-1)


class ColumnAttention(nn.Module):
    """Self-attention over state columns, read out as one scalar per column."""

    def __init__(self, n_positions: int, dim: int = 16, generator=None):
        super().__init__()
        self.n_positions = n_positions
        self.q = init_uniform_(nn.Linear(3, dim, dtype=DTYPE), generator)
        self.k = init_uniform_(nn.Linear(3, dim, dtype=DTYPE), generator)
        self.v = init_uniform_(nn.Linear(3, dim, dtype=DTYPE), generator)
        self.out = init_uniform_(nn.Linear(dim, 1, dtype=DTYPE), generator)

    def forward(self, state: torch.Tensor) -> torch.Tensor:
        cols = state.transpose(-1, -2)
        v = self.v(cols)
        mixed = attention(self.q(cols), self.k(cols), v)
        return self.out(mish(mixed + v)).squeeze(-1)


class DenseEncoder(nn.Module):
    """Attention-free stand-in with the same output width."""

    def __init__(self, n_positions: int, generator=None):
        super().__init__()
        self.n_positions = n_positions
        self.net = DenseNet([3 * n_positions, 64, n_positions], generator=generator)

    def forward(self, state: torch.Tensor) -> torch.Tensor:
        return self.net(state.flatten(-2))


class ActorNet(nn.Module):
    """Diffusion actor.  ``use_attention`` / ``use_diffusion`` give the ablations."""

    def __init__(self, n_servers: int, queue_window: int, T: int = 10, hidden: int = 256,
                 use_attention: bool = True, use_diffusion: bool = True, x0_form: str = "tanh",
                 schedule: Optional[DiffusionSchedule] = None, seed: int = 0):
        super().__init__()
        if x0_form not in ("tanh", "standard"):
            raise ValueError("x0_form must be 'tanh' or 'standard'")
        gen = torch.Generator().manual_seed(seed)
        self.n_servers, self.queue_window = n_servers, queue_window
        self.n_positions = n_servers + queue_window
        self.action_dim = queue_window + 2
        self.use_attention, self.use_diffusion = use_attention, use_diffusion
        self.x0_form = x0_form
        self.schedule = schedule or DiffusionSchedule(T)
        self.T = self.schedule.T
        self.hidden = hidden

        n, d = self.n_positions, self.action_dim
        self.encoder = ColumnAttention(n, generator=gen) if use_attention else DenseEncoder(n, generator=gen)
        context = n + 3 * n
        if use_diffusion:
            self.denoiser = DenseNet([d + TIME_EMBED_DIM + context, hidden, hidden, d], generator=gen)
            self.register_buffer("time_table", sinusoidal_table(self.T + 1))
        else:
            self.mean_head = DenseNet([context, hidden, hidden, d], generator=gen)
        self.var_head = init_uniform_(nn.Linear(d, d, dtype=DTYPE), gen)

    # -- pieces --------------------------------------------------------------

    def extract_features(self, state: torch.Tensor) -> torch.Tensor:
        if tuple(state.shape[-2:]) != (3, self.n_positions):
            raise ValueError(f"state must be 3 x {self.n_positions}, got {tuple(state.shape)}")
        return self.encoder(state)

    def context(self, state: torch.Tensor) -> torch.Tensor:
        return torch.cat([self.extract_features(state), state.flatten(-2)], dim=-1)

    def epsilon(self, x: torch.Tensor, i: int, ctx: torch.Tensor) -> torch.Tensor:
        emb = self.time_table[i].expand(*x.shape[:-1], TIME_EMBED_DIM)
        return self.denoiser(torch.cat([x, emb, ctx], dim=-1))

    def posterior_mean(self, x: torch.Tensor, i: int, eps: torch.Tensor) -> torch.Tensor:
        s = self.schedule
        return x / math.sqrt(s.alphas[i]) - s.betas[i] * eps / math.sqrt(1 - s.alpha_bar[i])

    def reverse_step(self, x: torch.Tensor, i: int, ctx: torch.Tensor,
                     generator: Optional[torch.Generator] = None, noise: Optional[torch.Tensor] = None):
        if not 1 <= i <= self.T:
            raise ValueError(f"step index {i} outside 1..{self.T}")
        mean = self.posterior_mean(x, i, self.epsilon(x, i, ctx))
        var = self.schedule.posterior_variance(i)
        if var == 0.0:
            return mean
        if noise is None:
            noise = torch.randn(x.shape, generator=generator, dtype=x.dtype)
        return mean + math.sqrt(var) * noise

    def x0_from_eps(self, x: torch.Tensor, i: int, eps: torch.Tensor) -> torch.Tensor:
        abar = self.schedule.alpha_bar
        if self.x0_form == "tanh":
            return x / math.sqrt(abar[i]) - torch.tanh(eps) / math.sqrt(abar[i - 1])
        return (x - math.sqrt(1 - abar[i]) * eps) / math.sqrt(abar[i])

    def denoised_x0(self, x: torch.Tensor, i: int, ctx: torch.Tensor) -> torch.Tensor:
        return self.x0_from_eps(x, i, self.epsilon(x, i, ctx))

    # -- full chain ----------------------------------------------------------

    def action_mean(self, state: torch.Tensor, generator: Optional[torch.Generator] = None,
                    noiseless: bool = False) -> torch.Tensor:
        """Run the reverse chain from x_T down to the denoised action x0.

        ``noiseless`` starts from x_T = 0 and drops the per-step noise,
        which follows the mean path of the chain.
        """
        ctx = self.context(state)
        if not self.use_diffusion:
            return self.mean_head(ctx)
        shape = (*state.shape[:-2], self.action_dim)
        if noiseless:
            x = torch.zeros(shape, dtype=state.dtype)
            for i in range(self.T, 1, -1):
                x = self.reverse_step(x, i, ctx, noise=torch.zeros(shape, dtype=state.dtype))
        else:
            x = torch.randn(shape, generator=generator, dtype=state.dtype)
            for i in range(self.T, 1, -1):
                x = self.reverse_step(x, i, ctx, generator)
        return self.denoised_x0(x, 1, ctx)

    def log_variance(self, x0: torch.Tensor) -> torch.Tensor:
        return torch.clamp(self.var_head(x0), LOGVAR_MIN, LOGVAR_MAX)

    def forward(self, state: torch.Tensor, generator: Optional[torch.Generator] = None,
                deterministic: bool = False) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Return (action in [0, 1], action mean x0, log-variance).

        ``deterministic`` follows the noiseless chain and skips the final
        Gaussian draw, so the action depends on the state alone.
        """
        action, _, x0, logvar = self.sample(state, generator, deterministic)
        return action, x0, logvar

    def sample(self, state: torch.Tensor, generator: Optional[torch.Generator] = None,
               deterministic: bool = False):
        """Like ``forward`` but also returns the pre-squash value u: (action, u, x0, logvar)."""
        x0 = self.action_mean(state, generator, noiseless=deterministic)
        logvar = self.log_variance(x0)
        if deterministic:
            u = x0
        else:
            u = x0 + torch.exp(0.5 * logvar) * torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
        return squash(u), u, x0, logvar

    sample_action = forward

    @torch.no_grad()
    def act(self, state: np.ndarray, generator: Optional[torch.Generator] = None,
            deterministic: bool = False) -> np.ndarray:
        a, _, _ = self(torch.as_tensor(state, dtype=DTYPE), generator, deterministic)
        return a.numpy()

    def config_dict(self) -> dict:
        return {"n_servers": self.n_servers, "queue_window": self.queue_window, "T": self.T,
                "hidden": self.hidden, "use_attention": self.use_attention,
                "use_diffusion": self.use_diffusion, "x0_form": self.x0_form,
                "schedule_kind": self.schedule.kind}


VARIANTS = {
    "eat": (True, True),
    "eat-a": (False, True),
    "eat-d": (True, False),
    "eat-da": (False, False),
}


def build_actor(variant: str, n_servers: int, queue_window: int, seed: int = 0, **kwargs) -> ActorNet:
    try:
        use_attention, use_diffusion = VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown actor variant {variant!r}; expected one of {sorted(VARIANTS)}") from None
    return ActorNet(n_servers, queue_window, use_attention=use_attention, use_diffusion=use_diffusion,
                    seed=seed, **kwargs)
