"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np

from .env import EnvConfig


def check_states(X, n_servers: int, queue_window: int) -> np.ndarray:
    """Return ``X`` as a float array of shape (n, 3, |E| + l).

    A single 3 x (|E| + l) state is promoted to a batch of one.
    """
    X = np.asarray(X, dtype=float)
    expected = (3, n_servers + queue_window)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != expected:
        raise ValueError(f"states must have shape (n, {expected[0]}, {expected[1]}); got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("states contain NaN or infinite values")
    return X


def check_action(a, queue_window: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != (queue_window + 2,):
        raise ValueError(f"action must have length {queue_window + 2}; got shape {a.shape}")
    if np.any(a < 0) or np.any(a > 1):
        raise ValueError("action components must lie in [0, 1]")
    return a


def check_env_config(env_config) -> EnvConfig:
    if env_config is None:
        return EnvConfig()
    if not isinstance(env_config, EnvConfig):
        raise TypeError(f"expected an EnvConfig, got {type(env_config).__name__}")
    return env_config
