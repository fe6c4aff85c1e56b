"""Value decomposition under partial observability, with expert imitation.

Subpackages and modules:

* ``vdlab.envs``: aliased FrozenLake, cyclic matrix games, grid skirmish.
* ``vdlab.valuestore``: tabular and perceptron utilities, replay buffer.
* ``vdlab.mixer``: additive and monotonic hypernetwork mixers, TD targets.
* ``vdlab.training``: baseline value decomposition, DAgger-style expert
  imitation, behavior cloning.
* ``vdlab.oracle``: exact solvers used as ground truth.
* ``vdlab.harness``: experiment runner and CLI.
"""

from .training import (
    BehaviorCloning,
    IGMBaseline,
    IGMDA,
    TrainConfig,
    TrainReport,
    make_trainer,
    train_baseline_igm,
    train_behavior_cloning,
    train_igm_da,
)

__version__ = "0.1.0"

__all__ = [
    "BehaviorCloning",
    "IGMBaseline",
    "IGMDA",
    "TrainConfig",
    "TrainReport",
    "make_trainer",
    "train_baseline_igm",
    "train_behavior_cloning",
    "train_igm_da",
]
