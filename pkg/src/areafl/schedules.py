"""Step-size schedules and the optimal server aggregation rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError

__all__ = [
    "theorem1_D",
    "theorem1_alpha",
    "theorem2_alpha",
    "theorem2_bound",
    "optimal_lambda_s",
    "StepSchedule",
    "Constant",
    "InverseK",
    "TheoremOne",
    "ConstantTheoremTwo",
]


def theorem1_D(mu: float, L: float, M: int) -> float:
    """Largest admissible initial step for the decreasing schedule.

    Minimum of ``2/(M(mu+L))``, ``gamma/(L^2 (M-1))``,
    ``sqrt(M gamma^2 / (64 L^4 (M-1)^3))`` and
    ``cbrt(gamma / (32 L^4 (M-1)^3))`` with ``gamma = 2 mu L / (mu + L)``.
    The last three terms bound client drift and are dropped for ``M = 1``.
    """
    if not (mu > 0 and L >= mu and M >= 1):
        raise ConfigurationError(f"need mu > 0, L >= mu, M >= 1 (got mu={mu}, L={L}, M={M})")
    gamma = 2.0 * mu * L / (mu + L)
    D = 2.0 / (M * (mu + L))
    if M > 1:
        m1 = M - 1
        D = min(
            D,
            gamma / (L**2 * m1),
            math.sqrt(M * gamma**2 / (64.0 * L**4 * m1**3)),
            (gamma / (32.0 * L**4 * m1**3)) ** (1.0 / 3.0),
        )
    return D


def theorem1_alpha(k, p_min: float, M: int, gamma: float, D: float):
    """``1 / (p_min M gamma k / 48 + 1 / D)``; works elementwise on arrays."""
    return 1.0 / (p_min * M * gamma * np.asarray(k, dtype=np.float64) / 48.0 + 1.0 / D)


def theorem2_alpha(K: int, p_s: float, q_bar: float, sigma: float, B: float, M: int, dist0_sq: float) -> float:
    """Constant step that minimizes the ergodic-average bound after ``K`` iterations."""
    if K < 1:
        raise ConfigurationError("K must be at least 1")
    num = (1.0 / p_s + 2.0 * q_bar) * dist0_sq
    den = (sigma**2 + (M + 1) * B**2 / 2.0) * M * K
    return math.sqrt(num / den)


def theorem2_bound(K: int, p_s: float, q_bar: float, sigma: float, B: float, M: int, dist0_sq: float) -> float:
    """Upper bound on ``E[f(xbar_K) - f*]`` reached with :func:`theorem2_alpha`."""
    return math.sqrt((1.0 / p_s + 2.0 * q_bar) * (sigma**2 + (M + 1) * B**2 / 2.0) * dist0_sq / (M * K))


def optimal_lambda_s(lam) -> float:
    """Server rate minimizing the ergodic bound under exponential arrivals.

    Only needs ``sum(lam)`` and ``mean(1 / lam)``.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if lam.size == 0 or np.any(lam <= 0):
        raise ConfigurationError("client rates must be positive")
    return math.sqrt(lam.sum() / (2.0 * np.mean(1.0 / lam)))


class StepSchedule:
    """Maps the server iteration counter ``k`` to a step size."""

    def __call__(self, k: int) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(StepSchedule):
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError("step size must be positive")

    def __call__(self, k):
        return self.alpha


@dataclass(frozen=True)
class InverseK(StepSchedule):
    """``c0 / (k + 1)``."""

    c0: float

    def __call__(self, k):
        return self.c0 / (k + 1.0)


@dataclass(frozen=True)
class TheoremOne(StepSchedule):
    """Decreasing ``Theta(1 / (p_min k))`` schedule for strongly convex problems."""

    p_min: float
    M: int
    gamma: float
    D: float

    @classmethod
    def from_constants(cls, mu: float, L: float, M: int, p_min: float) -> "TheoremOne":
        gamma = 2.0 * mu * L / (mu + L)
        return cls(p_min=p_min, M=M, gamma=gamma, D=theorem1_D(mu, L, M))

    def __call__(self, k):
        return float(theorem1_alpha(k, self.p_min, self.M, self.gamma, self.D))


@dataclass(frozen=True)
class ConstantTheoremTwo(Constant):
    """Constant step from :func:`theorem2_alpha`; keeps its inputs for reporting."""

    K: int = 1
    p_s: float = 1.0
    q_bar: float = 1.0

    @classmethod
    def from_constants(cls, K, p_s, q_bar, sigma, B, M, dist0_sq) -> "ConstantTheoremTwo":
        alpha = theorem2_alpha(K, p_s, q_bar, sigma, B, M, dist0_sq)
        return cls(alpha=alpha, K=K, p_s=p_s, q_bar=q_bar)
