"""Comparison methods run under the same event streams as AREA.

* ``s-fedavg``: synchronous FedAvg, a round waits for every sampled client.
* ``as-fedavg``: clients send full local models; the server replaces its
  model with the mean of each full buffer.
* ``fedbuff``: clients send pseudo-gradients ``x_received - x^M``; the server
  steps along their mean with ``server_lr``.

The AS-FedAvg replacement rule is an interpretation: only "clients share
their local model estimates" is fixed, so the simplest consistent rule is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import NO_NOISE, ConfigurationError, DivergenceError, NoiseModel, local_sgd
from .metrics import MetricsSeries
from .rng import stream

__all__ = [
    "BufferState",
    "async_fedavg_on_message",
    "flush_async_fedavg",
    "fedbuff_on_message",
    "flush_fedbuff",
    "SyncState",
    "sync_fedavg_round",
    "run_sync_fedavg",
    "make_method",
]


@dataclass
class BufferState:
    x_s: np.ndarray
    delta: int = 4
    server_lr: float = 1.0
    buffer: list = field(default_factory=list)

    def __post_init__(self):
        self.x_s = np.array(self.x_s, dtype=np.float64, copy=True).ravel()
        if self.delta < 1:
            raise ConfigurationError("delta must be >= 1")


def flush_async_fedavg(state: BufferState) -> None:
    if state.buffer:
        state.x_s = np.mean(state.buffer, axis=0)
        state.buffer.clear()


def async_fedavg_on_message(state: BufferState, model) -> bool:
    """Buffer a full local model; on the ``delta``-th, replace ``x_s`` by the buffer mean.

    Returns True when the model was updated.
    """
    state.buffer.append(np.asarray(model, dtype=np.float64))
    if len(state.buffer) >= state.delta:
        flush_async_fedavg(state)
        return True
    return False


def flush_fedbuff(state: BufferState) -> None:
    if state.buffer:
        state.x_s = state.x_s - state.server_lr * np.mean(state.buffer, axis=0)
        state.buffer.clear()


def fedbuff_on_message(state: BufferState, pseudo_grad) -> bool:
    """Buffer a pseudo-gradient; on the ``delta``-th, step ``x_s`` along the buffer mean."""
    state.buffer.append(np.asarray(pseudo_grad, dtype=np.float64))
    if len(state.buffer) >= state.delta:
        flush_fedbuff(state)
        return True
    return False


class _BufferedMethod:
    """Event-driven driver shared by AS-FedAvg and FedBuff."""

    def __init__(self, setup, pseudo_gradient: bool):
        from .protocol import Buffered

        self.setup = setup
        self.pseudo_gradient = pseudo_gradient
        delta = setup.criterion.delta if isinstance(setup.criterion, Buffered) else 1
        self.state = BufferState(setup.initial_model(), delta=delta, server_lr=setup.server_lr)
        self.k = 0
        alpha0 = setup.schedule(0)
        n = setup.problem.n
        self.cached_x = [self.state.x_s.copy() for _ in range(n)]
        self.cached_alpha = [alpha0] * n
        self.rounds = [0] * n

    @property
    def x_s(self):
        return self.state.x_s

    def on_client(self, i: int) -> None:
        s = self.setup
        xM = local_sgd(s.problem.objectives[i], s.noise, self.cached_x[i], self.cached_alpha[i], s.M,
                       stream(s.seed, "noise", i, self.rounds[i]))
        self.rounds[i] += 1
        msg = self.cached_x[i] - xM if self.pseudo_gradient else xM
        self.state.buffer.append(msg)
        self.k += 1
        self.cached_x[i] = self.state.x_s.copy()
        self.cached_alpha[i] = s.schedule(self.k)

    def aggregate(self) -> None:
        with np.errstate(over="ignore", invalid="ignore"):
            if self.pseudo_gradient:
                flush_fedbuff(self.state)
            else:
                flush_async_fedavg(self.state)
        self.k += 1

    def pending_messages(self) -> int:
        return len(self.state.buffer)


def make_method(setup):
    if setup.method == "as-fedavg":
        return _BufferedMethod(setup, pseudo_gradient=False)
    if setup.method == "fedbuff":
        return _BufferedMethod(setup, pseudo_gradient=True)
    raise ConfigurationError(f"unknown method {setup.method!r}")


@dataclass
class SyncState:
    """Synchronous FedAvg state; ``last_round`` holds ``(clients, arrival offsets)``."""

    x_s: np.ndarray
    problem: object
    M: int = 1
    noise: NoiseModel = NO_NOISE
    schedule: object = None
    sample_count: int = 4
    seed: int = 0
    rates: Optional[np.ndarray] = None
    k: int = 0
    rounds: Optional[list] = None
    last_round: tuple = ()

    def __post_init__(self):
        self.x_s = np.array(self.x_s, dtype=np.float64, copy=True).ravel()
        if not 1 <= self.sample_count <= self.problem.n:
            raise ConfigurationError(f"cannot sample {self.sample_count} of {self.problem.n} clients")
        if self.rounds is None:
            self.rounds = [0] * self.problem.n


def sync_fedavg_round(state: SyncState, rng: np.random.Generator, clock: Optional[np.random.Generator] = None):
    """One synchronous round; returns ``(x_s, duration)``.

    ``rng`` samples the participating clients uniformly without replacement;
    ``clock`` draws their exponential response times (unit time when the
    event model has no rates).  The round lasts as long as its slowest client.
    """
    n = state.problem.n
    chosen = np.sort(rng.choice(n, size=state.sample_count, replace=False))
    if state.rates is not None:
        offsets = clock.exponential(1.0 / state.rates[chosen])
    else:
        offsets = np.ones(chosen.size)
    alpha = state.schedule(state.k)
    models = []
    for i in chosen:
        models.append(local_sgd(state.problem.objectives[i], state.noise, state.x_s, alpha, state.M,
                                stream(state.seed, "noise", int(i), state.rounds[i])))
        state.rounds[i] += 1
    state.x_s = np.mean(models, axis=0)
    state.k += chosen.size + 1
    state.last_round = (chosen, offsets)
    return state.x_s, float(offsets.max())


def run_sync_fedavg(setup):
    """Trial driver for S-FedAvg with the same outputs as :func:`run_trial`."""
    from .scheduler import SERVER, EventLog, PoissonRates, TrialResult

    prob = setup.problem
    rates = np.asarray(setup.event_model.rates) if isinstance(setup.event_model, PoissonRates) else None
    state = SyncState(setup.initial_model(), prob, setup.M, setup.noise, setup.schedule, setup.sample_count,
                      setup.seed, rates)
    sampler = stream(setup.seed, "sampling")
    clock = stream(setup.seed, "events")
    K = setup.K if setup.K is not None else math.inf
    t_h = setup.t_h if setup.t_h is not None else math.inf
    log = EventLog()
    metrics = MetricsSeries()
    metrics.append(0.0, 0, prob.loss(state.x_s), prob.accuracy(state.x_s))
    t = 0.0
    diverged = False
    while state.k + setup.sample_count + 1 <= K:
        k0, prev = state.k, state.x_s.copy()
        try:
            x_s, duration = sync_fedavg_round(state, sampler, clock)
        except DivergenceError:
            diverged = True
            metrics.append(t, state.k, math.inf, float("nan"))
            break
        if t + duration > t_h:
            state.x_s, state.k = prev, k0
            break
        chosen, offsets = state.last_round
        for j, pos in enumerate(np.argsort(offsets, kind="stable")):
            log.append(k0 + j + 1, int(chosen[pos]), t + float(offsets[pos]))
        t += duration
        log.append(state.k, SERVER, t)
        loss = prob.loss(x_s) if np.all(np.isfinite(x_s)) else math.inf
        if not math.isfinite(loss):
            diverged = True
            metrics.append(t, state.k, math.inf, float("nan"))
            break
        metrics.append(t, state.k, loss, prob.accuracy(x_s))
    return TrialResult(log, metrics, state.x_s.copy(), diverged, state)
