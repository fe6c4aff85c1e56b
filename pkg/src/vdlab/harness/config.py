"""Experiment configuration files.

Example::

    {
      "env": {"type": "frozenlake"},
      "trainer": ["baseline", "igm-da"],
      "train": {"store": "tabular", "mixer": "additive", "lr": 0.1,
                "total_env_steps": 50000},
      "seeds": [0, 1, 2],
      "eval_interval": 5000,
      "eval_episodes": 32,
      "output_dir": "runs/frozenlake"
    }

``trainer`` may be a single name or a list. A relative ``output_dir`` is
resolved against the directory holding the config file.
"""

import json
import os
import re
from dataclasses import asdict, dataclass, field, fields

from ..envs import env_from_spec
from ..exceptions import ConfigurationError, RejectedInputError
from ..training import TRAINERS, TrainConfig

_TOP_LEVEL = {"env", "trainer", "train", "seeds", "eval_interval", "eval_episodes", "output_dir"}
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)} - {"seed", "eval_interval", "eval_episodes"}


@dataclass
class ExperimentConfig:
    env: dict
    trainers: list
    train: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    eval_interval: int = 0
    eval_episodes: int = 32
    output_dir: str = "runs"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("field 'seeds': must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("field 'seeds': seeds must be distinct")
        for s in self.seeds:
            if not isinstance(s, int) or isinstance(s, bool) or s < 0:
                raise ConfigurationError(f"field 'seeds': {s!r} is not a non-negative integer")
        for name in self.trainers:
            if name not in TRAINERS:
                raise ConfigurationError(
                    f"field 'trainer': unknown trainer {name!r}; choose from {sorted(TRAINERS)}"
                )
        unknown = set(self.train) - _TRAIN_FIELDS
        if unknown:
            raise ConfigurationError(f"field 'train': unknown keys {sorted(unknown)}")
        # validates values and the environment spec eagerly
        self.train_config(self.seeds[0])
        env_from_spec(self.env)

    def train_config(self, seed):
        try:
            return TrainConfig(
                **self.train, seed=seed, eval_interval=self.eval_interval, eval_episodes=self.eval_episodes
            )
        except (TypeError, RejectedInputError) as exc:
            raise ConfigurationError(f"field 'train': {exc}") from exc

    def runs(self):
        return [(t, s) for t in self.trainers for s in self.seeds]

    def to_dict(self):
        out = asdict(self)
        out["trainer"] = out.pop("trainers")
        return out


def _line_of(text, message):
    match = re.search(r"field '([^']+)'", message)
    if match:
        key = match.group(1)
        for n, line in enumerate(text.splitlines(), start=1):
            if f'"{key}"' in line:
                return n
    return 1


def parse_experiment(text, base_dir="."):
    """Parse and validate config text; errors are prefixed with a line number."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        err = ConfigurationError(f"line {exc.lineno}: invalid JSON: {exc.msg}")
        err.line = exc.lineno
        raise err from exc
    try:
        if not isinstance(raw, dict):
            raise ConfigurationError("top level must be a JSON object")
        unknown = set(raw) - _TOP_LEVEL
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigurationError(f"field '{key}': unknown top-level field")
        for key in ("env", "trainer"):
            if key not in raw:
                raise ConfigurationError(f"field '{key}': required")
        trainers = raw["trainer"]
        trainers = [trainers] if isinstance(trainers, str) else list(trainers)
        out = raw.get("output_dir", "runs")
        if not os.path.isabs(out):
            out = os.path.join(base_dir, out)
        for key in ("eval_interval", "eval_episodes"):
            value = raw.get(key, 0 if key == "eval_interval" else 32)
            if not isinstance(value, int) or value < (0 if key == "eval_interval" else 1):
                raise ConfigurationError(f"field '{key}': invalid value {value!r}")
        return ExperimentConfig(
            env=raw["env"],
            trainers=trainers,
            train=dict(raw.get("train", {})),
            seeds=list(raw.get("seeds", [0])),
            eval_interval=raw.get("eval_interval", 0),
            eval_episodes=raw.get("eval_episodes", 32),
            output_dir=out,
        )
    except ConfigurationError as exc:
        line = _line_of(text, str(exc))
        err = ConfigurationError(f"line {line}: {exc}")
        err.line = line
        raise err from exc


def load_experiment(path):
    with open(path) as fh:
        text = fh.read()
    try:
        return parse_experiment(text, os.path.dirname(os.path.abspath(path)))
    except ConfigurationError as exc:
        line = getattr(exc, "line", 1)
        err = ConfigurationError(f"{path}:{line}: {str(exc).split(': ', 1)[-1]}")
        err.line = line
        raise err from exc
