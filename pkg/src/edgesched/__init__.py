"""QoS-aware gang scheduling of split generative-AI tasks on edge clusters."""

from .core import Decision, DecisionKind, ServerState, Task, decode_action, encode_state
from .env import (
    ArrivalConfig,
    EdgeClusterEnv,
    EnvConfig,
    QualityModel,
    RewardParams,
    TimeModel,
    grid_config,
)
from .estimators import (
    EATScheduler,
    GeneticScheduler,
    GreedyScheduler,
    HarmonyScheduler,
    RandomScheduler,
    make_scheduler,
)

__version__ = "0.1.0"
