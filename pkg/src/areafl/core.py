"""Loss oracles and the stochastic gradient wrapper.

Three objective kinds are supported:

* :class:`Quadratic` -- ``1/2 (x - c)^T Q (x - c)``, smooth and strongly convex.
* :class:`AbsoluteDeviation` -- ``||x - c||_1 / d``, convex and Lipschitz.
* :class:`MultinomialLogReg` -- ridge-regularized softmax regression (negative
  log-likelihood) over a subset of a shared sample matrix.

All oracles are pure functions of their inputs.  Randomness only enters
through :func:`stochastic_gradient`, which takes an explicit generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ConfigurationError",
    "DivergenceError",
    "Quadratic",
    "AbsoluteDeviation",
    "MultinomialLogReg",
    "ProblemConstants",
    "NoiseModel",
    "quadratic_value_grad",
    "absdev_value_subgrad",
    "logreg_value_grad",
    "stochastic_gradient",
    "local_sgd",
]


class ConfigurationError(ValueError):
    """Invalid problem, dimension or experiment configuration."""


class DivergenceError(FloatingPointError):
    """A local iterate became non-finite."""


def _as_vector(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != d:
        raise ConfigurationError(f"expected a vector of dimension {d}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class Quadratic:
    """``f(x) = 1/2 (x - c)^T Q (x - c)``.

    ``Q`` is either a dense symmetric PSD ``(d, d)`` matrix or a 1-D array
    holding its diagonal.
    """

    Q: np.ndarray
    center: np.ndarray

    kind = "quadratic"

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=np.float64)
        c = np.asarray(self.center, dtype=np.float64).ravel()
        if Q.ndim == 1:
            ok = Q.shape == c.shape
        else:
            ok = Q.shape == (c.size, c.size)
        if not ok:
            raise ConfigurationError(f"Q of shape {Q.shape} does not match center of size {c.size}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.center.size

    def hess_vec(self, v: np.ndarray) -> np.ndarray:
        if self.Q.ndim == 1:
            return self.Q * v
        return self.Q @ v

    def eigenvalues(self) -> np.ndarray:
        if self.Q.ndim == 1:
            return np.sort(self.Q)
        return np.linalg.eigvalsh(self.Q)

    def value_grad(self, x):
        r = _as_vector(x, self.dim) - self.center
        g = self.hess_vec(r)
        return 0.5 * float(r @ g), g

    def minimizer(self) -> np.ndarray:
        return self.center.copy()


@dataclass(frozen=True)
class AbsoluteDeviation:
    """``f(x) = ||x - c||_1 / d`` with subgradient ``sign(x - c) / d``.

    The subgradient at a kink is 0, which belongs to the subdifferential.
    For ``d = 1`` this is ``|x - c|`` and the Lipschitz constant is 1.
    """

    center: np.ndarray

    kind = "absdev"

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=np.float64)).ravel())

    @property
    def dim(self) -> int:
        return self.center.size

    def value_grad(self, x):
        r = _as_vector(x, self.dim) - self.center
        d = self.dim
        return float(np.abs(r).sum()) / d, np.sign(r) / d

    def minimizer(self) -> np.ndarray:
        return self.center.copy()


@dataclass(frozen=True)
class MultinomialLogReg:
    """Ridge-regularized softmax regression on ``features[sample_ids]``.

    The parameter vector packs ``n_classes`` weight blocks of size
    ``n_features`` class-major, i.e. ``x.reshape(n_classes, n_features)``.
    The loss is the mean negative log-likelihood plus ``ridge / 2 * ||x||^2``.
    ``features`` and ``labels`` are usually shared between all clients; each
    client only owns an index array.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    ridge: float = 0.0
    sample_ids: Optional[np.ndarray] = None

    kind = "logreg"

    def __post_init__(self):
        ids = self.sample_ids
        if ids is None:
            ids = np.arange(len(self.labels))
        object.__setattr__(self, "sample_ids", np.asarray(ids, dtype=np.int64))

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.n_classes * self.n_features

    @property
    def n_samples(self) -> int:
        return self.sample_ids.size

    def value_grad(self, x, sample_ids=None):
        W = _as_vector(x, self.dim).reshape(self.n_classes, self.n_features)
        ids = self.sample_ids if sample_ids is None else np.asarray(sample_ids, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("logistic regression loss needs at least one sample")
        X = self.features[ids]
        y = self.labels[ids]
        logits = X @ W.T
        shift = logits.max(axis=1, keepdims=True)
        ez = np.exp(logits - shift)
        z = ez.sum(axis=1, keepdims=True)
        lse = np.log(z[:, 0]) + shift[:, 0]
        rows = np.arange(ids.size)
        nll = float(np.mean(lse - logits[rows, y]))
        probs = ez / z
        probs[rows, y] -= 1.0
        grad = probs.T @ X / ids.size
        value = nll + 0.5 * self.ridge * float(np.sum(W * W))
        grad += self.ridge * W
        return value, grad.ravel()

    def predict(self, x, features) -> np.ndarray:
        W = _as_vector(x, self.dim).reshape(self.n_classes, self.n_features)
        return np.argmax(features @ W.T, axis=1)


def quadratic_value_grad(obj, x):
    if not isinstance(obj, Quadratic):
        raise ConfigurationError(f"expected a Quadratic objective, got {type(obj).__name__}")
    return obj.value_grad(x)


def absdev_value_subgrad(obj, x):
    if not isinstance(obj, AbsoluteDeviation):
        raise ConfigurationError(f"expected an AbsoluteDeviation objective, got {type(obj).__name__}")
    return obj.value_grad(x)


def logreg_value_grad(obj, x, sample_ids=None):
    if not isinstance(obj, MultinomialLogReg):
        raise ConfigurationError(f"expected a MultinomialLogReg objective, got {type(obj).__name__}")
    return obj.value_grad(x, sample_ids)


@dataclass
class ProblemConstants:
    """Constants of a problem suite used by the step-size schedules.

    ``x_star`` and ``u_stars`` are only set when known analytically.
    """

    mu: float
    lipschitz_L: float
    lipschitz_B: float = float("nan")
    sigma: float = 0.0
    zeta: float = float("nan")
    x_star: Optional[np.ndarray] = None
    u_stars: Optional[Sequence[np.ndarray]] = field(default=None, repr=False)

    @property
    def gamma(self) -> float:
        mu, L = self.mu, self.lipschitz_L
        return 2.0 * mu * L / (mu + L)

    @property
    def kappa(self) -> float:
        return self.lipschitz_L / self.mu if self.mu > 0 else float("inf")


@dataclass(frozen=True)
class NoiseModel:
    """How client gradients are perturbed.

    kind
        ``"none"`` for exact (sub)gradients, ``"gaussian"`` for additive
        zero-mean noise with ``E||e||^2 = sigma^2`` (variance ``sigma^2 / d``
        per coordinate), ``"minibatch"`` for a uniform mini-batch of
        ``batch_size`` samples drawn without replacement.
    """

    kind: str = "none"
    sigma: float = 0.0
    batch_size: int = 32

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "minibatch"):
            raise ConfigurationError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be nonnegative")
        if self.kind == "minibatch" and self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")


NO_NOISE = NoiseModel()


def stochastic_gradient(obj, noise: NoiseModel, x, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Return an unbiased estimate of the (sub)gradient of ``obj`` at ``x``."""
    if noise.kind == "none":
        return obj.value_grad(x)[1]
    if noise.kind == "gaussian":
        g = obj.value_grad(x)[1]
        if noise.sigma == 0.0:
            return g
        return g + rng.standard_normal(g.size) * (noise.sigma / np.sqrt(g.size))
    if not isinstance(obj, MultinomialLogReg):
        raise ConfigurationError("mini-batch noise needs a sample-based objective")
    ids = obj.sample_ids
    if ids.size > noise.batch_size:
        ids = ids[rng.choice(ids.size, size=noise.batch_size, replace=False)]
    return obj.value_grad(x, ids)[1]


def local_sgd(obj, noise: NoiseModel, x0, alpha: float, steps: int, rng=None) -> np.ndarray:
    """Run ``steps`` stochastic (sub)gradient steps with constant ``alpha``.

    Raises :class:`DivergenceError` if the iterate stops being finite.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            x -= alpha * stochastic_gradient(obj, noise, x, rng)
    if not np.all(np.isfinite(x)):
        raise DivergenceError("local iterate is not finite")
    return x
