"""Metric series, time-to-accuracy and convergence-rate fitting."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = ["MetricsSeries", "SENTINEL_GT1", "compute_rho", "rate_fit", "value_at"]

# Returned by compute_rho when the target accuracy is never reached.
SENTINEL_GT1 = float("inf")


@dataclass
class MetricsSeries:
    """Rows of ``(wall_time, k, train_loss, test_accuracy)`` for one trial."""

    wall_time: list = field(default_factory=list)
    k: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)

    def append(self, wall_time: float, k: int, train_loss: float, test_accuracy: float) -> None:
        if self.wall_time and wall_time < self.wall_time[-1]:
            raise ValueError("metric rows must have nondecreasing wall time")
        self.wall_time.append(float(wall_time))
        self.k.append(int(k))
        self.train_loss.append(float(train_loss))
        self.test_accuracy.append(float(test_accuracy))

    def __len__(self) -> int:
        return len(self.k)

    def rows(self):
        return list(zip(self.wall_time, self.k, self.train_loss, self.test_accuracy))

    def as_arrays(self):
        return (np.asarray(self.wall_time), np.asarray(self.k), np.asarray(self.train_loss),
                np.asarray(self.test_accuracy))


def value_at(series: MetricsSeries, t_h: float):
    """Last row with ``wall_time <= t_h`` as ``(train_loss, test_accuracy)``."""
    idx = None
    for j, t in enumerate(series.wall_time):
        if t <= t_h:
            idx = j
        else:
            break
    if idx is None:
        raise ValueError("series has no row before the horizon")
    return series.train_loss[idx], series.test_accuracy[idx]


def compute_rho(series: MetricsSeries, t_h: float, target_acc: float = 0.80) -> float:
    """Fraction of the horizon needed to first reach ``target_acc``.

    Returns :data:`SENTINEL_GT1` if the target is never reached within ``t_h``.
    """
    if len(series) == 0:
        raise ValueError("empty series")
    for t, acc in zip(series.wall_time, series.test_accuracy):
        if t > t_h:
            break
        if acc >= target_acc:
            return t / t_h
    return SENTINEL_GT1


def rate_fit(errors, ks, k_window=None) -> float:
    """Least-squares slope of ``log(error)`` against ``log(k)``.

    Only points with ``k_window[0] <= k <= k_window[1]`` are used when a
    window is given.  Nonpositive errors are dropped with a warning.
    """
    e = np.asarray(errors, dtype=np.float64)
    k = np.asarray(ks, dtype=np.float64)
    keep = np.ones(e.shape, dtype=bool)
    if k_window is not None:
        keep &= (k >= k_window[0]) & (k <= k_window[1])
    bad = keep & ~(e > 0)
    if bad.any():
        warnings.warn(f"rate_fit: dropping {int(bad.sum())} nonpositive errors", RuntimeWarning, stacklevel=2)
        keep &= ~bad
    if keep.sum() < 2:
        raise ValueError("need at least two points to fit a rate")
    kk = k[keep]
    if math.log10(kk.max() / kk.min()) < 1.0 - 1e-9:
        warnings.warn("rate_fit: window spans less than a decade", RuntimeWarning, stacklevel=2)
    slope, _ = np.polyfit(np.log(kk), np.log(e[keep]), 1)
    return float(slope)
