"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np
from sklearn.utils import check_random_state  # noqa: F401  (re-exported)

from .exceptions import RejectedInputError


def check_index(value, upper, name="index"):
    """Return ``value`` as int, raising unless ``0 <= value < upper``."""
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, numbers.Integral):
        raise RejectedInputError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if not 0 <= value < upper:
        raise RejectedInputError(f"{name}={value} outside [0, {upper})")
    return value


def check_probability(value, name="probability"):
    value = float(value)
    if not 0.0 <= value <= 1.0 or not np.isfinite(value):
        raise RejectedInputError(f"{name}={value} outside [0, 1]")
    return value


def check_positive_int(value, name, minimum=1):
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, numbers.Integral):
        raise RejectedInputError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise RejectedInputError(f"{name}={value} must be >= {minimum}")
    return int(value)


def check_finite(array, what="value"):
    array = np.asarray(array, dtype=float)
    if not np.all(np.isfinite(array)):
        bad = np.argwhere(~np.isfinite(array))
        raise RejectedInputError(f"non-finite {what} at positions {bad[:5].tolist()}")
    return array


def as_rng(seed):
    """Coerce a seed or Generator into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.RandomState):
        return np.random.default_rng(seed.randint(2**31))
    return np.random.default_rng(seed)


def one_hot(index, size):
    out = np.zeros(size)
    out[index] = 1.0
    return out
