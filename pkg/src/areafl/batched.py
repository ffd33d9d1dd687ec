"""AREA vectorized over independent trials.

Rate studies need hundreds of trials of ``10^5`` iterations each, which is
out of reach for the per-event driver in :mod:`areafl.scheduler`.  Here all
trials advance in lockstep: the iteration counter (and so the step size)
is shared, while event indices and gradient noise differ per trial.  The
update rules are the protocol's (aggregator ``u``, residual messages), so
with exact gradients and the same events the result matches
:func:`areafl.verify.replay_derived` to rounding.

Supported objectives: :class:`~areafl.core.Quadratic` and
:class:`~areafl.core.AbsoluteDeviation`, with optional additive Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import AbsoluteDeviation, ConfigurationError, Quadratic
from .rng import stream
from .scheduler import SERVER, StationaryIID

__all__ = ["BatchedResult", "sample_iid_events", "run_batched_area"]


@dataclass
class BatchedResult:
    ks: np.ndarray  # iterations at which errors were recorded
    mean_sq_dist: np.ndarray  # mean over trials of ||x_{s,k} - x*||^2
    x_s: np.ndarray  # (trials, d) final server models
    ergodic: Optional[np.ndarray] = None  # (trials, d) mean of x_{s,0..K-1}


def sample_iid_events(model: StationaryIID, trials: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """``(trials, K)`` array of event indices, ``SERVER`` for server events."""
    p, p_s = model.probabilities()
    cdf = np.cumsum(np.append(p, p_s))
    cdf /= cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, rng.random((trials, K)), side="right"), len(p))
    idx[idx == len(p)] = SERVER
    return idx


class _Grad:
    def __init__(self, problem):
        objs = problem.objectives
        if all(isinstance(o, Quadratic) for o in objs):
            self.kind = "quadratic"
            self.Q = np.stack([np.diag(o.Q) if o.Q.ndim == 1 else o.Q for o in objs])
        elif all(isinstance(o, AbsoluteDeviation) for o in objs):
            self.kind = "absdev"
        else:
            raise ConfigurationError("batched runs support quadratic or absolute-deviation suites only")
        self.C = np.stack([o.center for o in objs])

    def __call__(self, clients: np.ndarray, x: np.ndarray) -> np.ndarray:
        r = x - self.C[clients]
        if self.kind == "quadratic":
            return np.einsum("rij,rj->ri", self.Q[clients], r)
        return np.sign(r) / r.shape[1]


def run_batched_area(problem, event_model: StationaryIID, schedule, *, M: int = 1, sigma: float = 0.0,
                     K: int, trials: int, seed: int = 0, x0=None, record_at=None, ergodic: bool = False,
                     events: Optional[np.ndarray] = None, chunk: int = 4096) -> BatchedResult:
    """Run ``trials`` independent AREA trials with server events from the model.

    ``record_at`` lists iterations ``k`` (0..K) at which the mean squared
    distance to ``problem.constants.x_star`` is recorded.  With ``ergodic``
    the running mean of ``x_{s,0}, ..., x_{s,K-1}`` is returned as well.
    ``events`` may supply a fixed ``(trials, K)`` event array.
    """
    n, d = problem.n, problem.dim
    grad = _Grad(problem)
    x_star = problem.constants.x_star
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).ravel()
    ev_rng = stream(seed, "batched", "events")
    noise_rng = stream(seed, "batched", "noise")
    noise_scale = sigma / np.sqrt(d)

    record = set() if record_at is None else {int(k) for k in record_at}
    ks, errs = [], []

    XS = np.tile(x0, (trials, 1))
    U = np.zeros((trials, d))
    Y = np.tile(x0, (trials, n, 1))
    P = np.empty((trials, n, d))
    all_rows = np.arange(trials)

    def local_round(clients, start, alpha):
        x = start.copy()
        for _ in range(M):
            g = grad(clients, x)
            if noise_scale > 0:
                g += noise_rng.standard_normal(g.shape) * noise_scale
            x -= alpha * g
        return x

    alpha0 = schedule(0)
    for i in range(n):
        P[:, i] = local_round(np.full(trials, i), XS, alpha0)

    S = np.zeros((trials, d)) if ergodic else None

    def snap(k):
        if k in record and x_star is not None:
            ks.append(k)
            errs.append(float(np.mean(np.sum((XS - x_star) ** 2, axis=1))))

    snap(0)
    block = None
    for k in range(K):
        if k % chunk == 0:
            if events is not None:
                block = events[:, k:k + chunk]
            else:
                block = sample_iid_events(event_model, trials, min(chunk, K - k), ev_rng)
        J = block[:, k % chunk]
        if ergodic:
            S += XS
        is_client = J != SERVER
        rc = all_rows[is_client]
        rs = all_rows[~is_client]
        if rc.size:
            ci = J[rc]
            pend = P[rc, ci]
            U[rc] += (pend - Y[rc, ci]) / n
            Y[rc, ci] = pend
        alpha = schedule(k + 1)
        if rc.size:
            P[rc, ci] = local_round(ci, XS[rc], alpha)
        if rs.size:
            XS[rs] += U[rs]
            U[rs] = 0.0
        snap(k + 1)

    return BatchedResult(np.asarray(ks), np.asarray(errs), XS,
                         S / K if ergodic else None)
