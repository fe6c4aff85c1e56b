"""Curve smoothing and across-seed percentile bands."""

import numpy as np

from ..exceptions import RejectedInputError
from ..utils import check_positive_int


def smooth(series, window=5):
    """Trailing moving average; early points average over what is available."""
    window = check_positive_int(window, "window")
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        return x
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def percentile_band(runs, p_lo=25, p_hi=75):
    """Per-point ``(median, lo, hi)`` across seeds, linear interpolation
    between order statistics.

    ``runs`` is a list of ``(env_steps, values)`` pairs, one per seed, or a
    2-D array of already aligned values.
    """
    if isinstance(runs, np.ndarray):
        values = runs.astype(float)
        steps = None
    else:
        runs = list(runs)
        if len(runs) < 2:
            raise RejectedInputError("percentile bands need at least two runs")
        steps = list(runs[0][0])
        for k, (s, _) in enumerate(runs[1:], start=1):
            s = list(s)
            if s != steps:
                mismatched = [a for a, b in zip(s, steps) if a != b]
                longer = s if len(s) > len(steps) else steps
                bad = mismatched[0] if mismatched else longer[min(len(s), len(steps))]
                raise RejectedInputError(f"run {k} is misaligned at env_steps={bad}")
        values = np.array([np.asarray(v, float) for _, v in runs])
    if values.shape[0] < 2:
        raise RejectedInputError("percentile bands need at least two runs")
    median = np.percentile(values, 50, axis=0)
    lo = np.percentile(values, p_lo, axis=0)
    hi = np.percentile(values, p_hi, axis=0)
    return median, lo, hi
