"""Build environments from JSON spec dictionaries.

Schema::

    {"type": "frozenlake", "layout": "SFFF/FHFH/FFFH/HFFG",
     "alias_groups": [[0], [1, 2], ...] | "identity" | "single" | "cell-type" | "distance",
     "slippery": false}
    {"type": "matrix", "payoffs": [...], "state_cycle": [0, 1],
     "observations": "constant" | "identity"}
    {"type": "skirmish", "skirmish": {"width": 5, "height": 3, "allies": 3,
     "enemies": 3, "sight_radius": 0, "seed": 0}}
"""

import json

from ..exceptions import ConfigurationError
from .frozenlake import DEFAULT_LAYOUT, make_aliased_frozenlake
from .matrix_game import make_matrix_game
from .skirmish import SkirmishConfig, make_grid_skirmish

_FIELDS = {
    "frozenlake": {"type", "layout", "alias_groups", "slippery", "discount", "horizon"},
    "matrix": {"type", "payoffs", "state_cycle", "observations", "discount"},
    "skirmish": {"type", "skirmish"},
}


def env_from_spec(spec):
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigurationError("env spec needs a 'type' field")
    kind = spec["type"]
    if kind not in _FIELDS:
        raise ConfigurationError(f"env spec field 'type': unknown environment {kind!r}")
    unknown = set(spec) - _FIELDS[kind]
    if unknown:
        raise ConfigurationError(f"env spec has unknown fields {sorted(unknown)} for type {kind!r}")
    if kind == "frozenlake":
        return make_aliased_frozenlake(
            spec.get("layout", DEFAULT_LAYOUT),
            spec.get("alias_groups"),
            slippery=spec.get("slippery", False),
            discount=spec.get("discount", 0.99),
            horizon=spec.get("horizon", 100),
        )
    if kind == "matrix":
        if "payoffs" not in spec:
            raise ConfigurationError("env spec field 'payoffs' is required for matrix games")
        return make_matrix_game(
            spec["payoffs"],
            spec.get("state_cycle"),
            observations=spec.get("observations", "constant"),
            discount=spec.get("discount", 0.9),
        )
    options = dict(spec.get("skirmish", {}))
    known = set(SkirmishConfig.__dataclass_fields__)
    if set(options) - known:
        raise ConfigurationError(f"env spec field 'skirmish' has unknown keys {sorted(set(options) - known)}")
    return make_grid_skirmish(SkirmishConfig(**options))


def load_env(path):
    with open(path) as fh:
        return env_from_spec(json.load(fh))
