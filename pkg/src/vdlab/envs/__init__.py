"""Environments: the DEC-POMDP core and three concrete worlds."""

from .base import (
    DEFAULT_ENUMERATION_CAP,
    DecPomdp,
    Episode,
    History,
    TabularDecPomdp,
    Transition,
    detect_insufficient_observation,
    enumerate_env,
    observe,
    rollout,
    step,
)
from .frozenlake import DEFAULT_LAYOUT, DRIFT_ALIAS_GROUPS, DRIFT_LAYOUT, make_aliased_frozenlake, make_drift_frozenlake
from .matrix_game import coordination_counterexample, make_matrix_game
from .skirmish import GridSkirmish, SkirmishConfig, make_grid_skirmish
from .spec import env_from_spec, load_env

__all__ = [
    "DEFAULT_ENUMERATION_CAP",
    "DEFAULT_LAYOUT",
    "DRIFT_ALIAS_GROUPS",
    "DRIFT_LAYOUT",
    "DecPomdp",
    "Episode",
    "GridSkirmish",
    "History",
    "SkirmishConfig",
    "TabularDecPomdp",
    "Transition",
    "coordination_counterexample",
    "detect_insufficient_observation",
    "enumerate_env",
    "env_from_spec",
    "load_env",
    "make_aliased_frozenlake",
    "make_drift_frozenlake",
    "make_grid_skirmish",
    "make_matrix_game",
    "observe",
    "rollout",
    "step",
]
