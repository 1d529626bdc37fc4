"""Small differentiable building blocks on top of torch autograd.

Everything defaults to float64 so that finite-difference checks and
seeded runs are reproducible bit for bit.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

DTYPE = torch.float64

CHECKPOINT_MAGIC = b"EDGESCHD"
CHECKPOINT_VERSION = 1


def as_tensor(x, dtype=None) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x) if not isinstance(x, torch.Tensor) else x, dtype=dtype or DTYPE)


def mish(x: torch.Tensor) -> torch.Tensor:
    return F.mish(x)


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """softmax(q k^T / sqrt(d_k)) v over the last two dimensions."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key width mismatch: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value count mismatch: {k.shape[-2]} vs {v.shape[-2]}")
    scores = q @ k.transpose(-1, -2) / math.sqrt(k.shape[-1])
    return torch.softmax(scores, dim=-1) @ v


def attention_weights(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(k.shape[-1]), dim=-1)


def init_uniform_(layer: nn.Linear, generator: Optional[torch.Generator] = None) -> nn.Linear:
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=generator)
        layer.bias.uniform_(-bound, bound, generator=generator)
    return layer


class DenseNet(nn.Module):
    """Affine layers with Mish between them and an optional Tanh on top."""

    def __init__(self, sizes: Sequence[int], output_activation: str = "identity",
                 generator: Optional[torch.Generator] = None, dtype=DTYPE):
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if output_activation not in ("identity", "tanh"):
            raise ValueError("output_activation must be 'identity' or 'tanh'")
        self.sizes = tuple(int(s) for s in sizes)
        self.output_activation = output_activation
        self.layers = nn.ModuleList(
            init_uniform_(nn.Linear(a, b, dtype=dtype), generator) for a, b in zip(sizes, sizes[1:]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {x.shape[-1]}")
        for layer in self.layers[:-1]:
            x = mish(layer(x))
        x = self.layers[-1](x)
        return torch.tanh(x) if self.output_activation == "tanh" else x


def dense_forward(net: DenseNet, x) -> torch.Tensor:
    return net(as_tensor(x))


def backward(net: nn.Module, x, upstream) -> torch.Tensor:
    """Backpropagate ``upstream`` through ``net`` at ``x``.

    Parameter gradients accumulate into ``.grad``; the input gradient is
    returned.
    """
    x = as_tensor(x).detach().requires_grad_(True)
    y = net(x)
    upstream = as_tensor(upstream)
    if upstream.shape != y.shape:
        raise ValueError(f"upstream gradient shape {tuple(upstream.shape)} != output {tuple(y.shape)}")
    y.backward(upstream)
    return x.grad


def make_adam(params: Iterable[torch.Tensor], lr: float = 3e-4, weight_decay: float = 1e-4) -> torch.optim.Optimizer:
    """Adam with decoupled weight decay."""
    return torch.optim.AdamW(params, lr=lr, weight_decay=weight_decay)


def adam_step(optimizer: torch.optim.Optimizer) -> None:
    optimizer.step()
    optimizer.zero_grad(set_to_none=False)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    tolerance: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def numeric_gradient(fn: Callable[[torch.Tensor], torch.Tensor], point: torch.Tensor, eps: float = 1e-6,
                     indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of a scalar function, coordinate by coordinate."""
    flat = point.detach().clone().reshape(-1)
    idx = range(flat.numel()) if indices is None else indices
    grad = np.zeros(flat.numel())
    with torch.no_grad():
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + eps
            up = float(fn(flat.reshape(point.shape)))
            flat[i] = orig - eps
            down = float(fn(flat.reshape(point.shape)))
            flat[i] = orig
            grad[i] = (up - down) / (2 * eps)
    return grad


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradient_check(fn: Callable[[torch.Tensor], torch.Tensor], point, tolerance: float = 1e-4,
                   eps: float = 1e-6, max_coords: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """Compare autograd against central differences at ``point``.

    The error is normwise: max |analytic - numeric| over the largest
    gradient magnitude.  ``max_coords`` limits the check to a random
    subset of coordinates for large inputs.
    """
    point = as_tensor(point).detach()
    x = point.clone().requires_grad_(True)
    out = fn(x)
    (analytic,) = torch.autograd.grad(out, x)
    analytic = analytic.detach().reshape(-1).numpy()
    indices = None
    if max_coords is not None and max_coords < point.numel():
        indices = np.random.default_rng(seed).choice(point.numel(), size=max_coords, replace=False)
    numeric = numeric_gradient(fn, point, eps, indices)
    if indices is not None:
        analytic, numeric = analytic[indices], numeric[indices]
    return GradCheckReport(_relative_error(analytic, numeric), float(np.max(np.abs(analytic - numeric))),
                           tolerance, analytic.size)


def check_parameter_gradients(module: nn.Module, loss_fn: Callable[[], torch.Tensor], tolerance: float = 1e-4,
                              eps: float = 1e-6, max_coords_per_param: Optional[int] = 32,
                              seed: int = 0) -> GradCheckReport:
    """gradient_check applied to every parameter tensor of ``module``."""
    worst_rel, worst_abs, count = 0.0, 0.0, 0
    for i, param in enumerate(module.parameters()):
        original = param.detach().clone()

        def fn(values, param=param):
            with torch.no_grad():
                param.copy_(values)
            return loss_fn()

        module.zero_grad()
        loss_fn().backward()
        analytic = param.grad.detach().clone().reshape(-1).numpy()
        indices = None
        if max_coords_per_param is not None and max_coords_per_param < param.numel():
            indices = np.random.default_rng(seed + i).choice(param.numel(), size=max_coords_per_param, replace=False)
        numeric = numeric_gradient(fn, original, eps, indices)
        with torch.no_grad():
            param.copy_(original)
        if indices is not None:
            analytic, numeric = analytic[indices], numeric[indices]
        worst_rel = max(worst_rel, _relative_error(analytic, numeric))
        worst_abs = max(worst_abs, float(np.max(np.abs(analytic - numeric))))
        count += analytic.size
    module.zero_grad()
    return GradCheckReport(worst_rel, worst_abs, tolerance, count)


# ---------------------------------------------------------------------------
# checkpoint container
#
# layout: MAGIC(8) | version u32 | header length u32 | header (utf-8 JSON)
#         | float64 little-endian values, tensors in header order
# header: {"tensors": [{"name": str, "shape": [int, ...]}, ...], "meta": {...}}


def dumps_checkpoint(tensors: Dict[str, torch.Tensor], meta: Optional[dict] = None) -> bytes:
    entries, payload = [], io.BytesIO()
    for name, value in tensors.items():
        # np.asarray keeps 0-d shapes (ascontiguousarray would promote them to 1-d)
        arr = np.asarray(value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else value, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape)})
        payload.write(arr.tobytes(order="C"))
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True,
                        separators=(",", ":")).encode()
    return CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)) + header + payload.getvalue()


def loads_checkpoint(blob: bytes):
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[16:16 + hlen].decode())
    offset = 16 + hlen
    tensors = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(entry["shape"])
        tensors[entry["name"]] = torch.tensor(arr.copy(), dtype=torch.float64)
        offset += 8 * n
    if offset != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    return tensors, header["meta"]


def save_checkpoint(path: Union[str, Path], tensors: Dict[str, torch.Tensor], meta: Optional[dict] = None) -> None:
    Path(path).write_bytes(dumps_checkpoint(tensors, meta))


def load_checkpoint(path: Union[str, Path]):
    return loads_checkpoint(Path(path).read_bytes())
