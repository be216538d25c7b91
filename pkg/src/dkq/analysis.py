"""Small helpers for reading transitions off parameter sweeps."""

from __future__ import annotations

import numpy as np


def density_onset(xs, densities, threshold: float = 0.05) -> float:
    """First sweep value whose stationary density exceeds ``threshold``."""
    xs = np.asarray(xs, dtype=float)
    above = np.nonzero(np.asarray(densities) > threshold)[0]
    if above.size == 0:
        return float("nan")
    return float(xs[above[0]])


def steepest_rise(xs, densities) -> float:
    """Midpoint of the interval with the largest density increase."""
    xs = np.asarray(xs, dtype=float)
    i = int(np.argmax(np.diff(np.asarray(densities, dtype=float))))
    return float(0.5 * (xs[i] + xs[i + 1]))


def peak_location(xs, values) -> float:
    return float(np.asarray(xs, dtype=float)[int(np.argmax(values))])


def loglog_slope(t, y) -> float:
    """Least-squares slope of log y against log t."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (t > 0) & (y > 0)
    return float(np.polyfit(np.log(t[ok]), np.log(y[ok]), 1)[0])


def crossing(xs, values, level: float) -> float:
    """Linear interpolation of the first crossing of ``level``."""
    xs = np.asarray(xs, dtype=float)
    v = np.asarray(values, dtype=float) - level
    for i in range(len(v) - 1):
        if v[i] == 0.0:
            return float(xs[i])
        if v[i] * v[i + 1] < 0:
            return float(xs[i] - v[i] * (xs[i + 1] - xs[i]) / (v[i + 1] - v[i]))
    if v[-1] == 0.0:
        return float(xs[-1])
    return float("nan")
