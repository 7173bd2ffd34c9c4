"""Offline two-agent tuning of effort thresholds for a simulated
proportional-mode elbow exoskeleton.

Pipeline: `simulator` generates threshold-grid datasets through
`datastore`; `learner` trains per-muscle Q-functionals (polynomial
action bases from `basis`, dense nets from `network`) on those logs;
the static-threshold oracle and the CLI in `cli` close the loop.
"""

from .basis import ActionBounds, BasisSpec, action_features, coefficient_count
from .datastore import Dataset, RewardConfig, Transition, compute_reward, read_dataset, write_dataset
from .learner import AgentSpec, Mixer, TrainConfig, run_training, select_actions
from .simulator import (
    SimConfig,
    SimState,
    ThresholdAction,
    ThresholdGrid,
    VirtualUserConfig,
    grid_collect,
    joint_speed,
    rollout_episode,
    static_oracle,
)

__version__ = "0.1.0"

__all__ = [
    "ActionBounds",
    "AgentSpec",
    "BasisSpec",
    "Dataset",
    "Mixer",
    "RewardConfig",
    "SimConfig",
    "SimState",
    "ThresholdAction",
    "ThresholdGrid",
    "TrainConfig",
    "Transition",
    "VirtualUserConfig",
    "action_features",
    "coefficient_count",
    "compute_reward",
    "grid_collect",
    "joint_speed",
    "read_dataset",
    "rollout_episode",
    "run_training",
    "select_actions",
    "static_oracle",
    "write_dataset",
    "__version__",
]
