"""Event models, event streams and the single-trial driver.

An iteration is one event: either a message from client ``i`` (indices
``0..n-1`` internally, ``1..n`` in exported logs) or an aggregation at the
server (:data:`SERVER`, exported as ``s``).  Under a buffered or periodic
criterion the server events are not drawn from the model but inserted by
the trial driver.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import protocol
from .core import NO_NOISE, ConfigurationError, DivergenceError, NoiseModel
from .metrics import MetricsSeries
from .rng import stream

__all__ = [
    "SERVER",
    "StationaryIID",
    "PoissonRates",
    "DeterministicCycle",
    "EventStream",
    "EventLog",
    "next_event",
    "stationary_probabilities",
    "TrialSetup",
    "TrialResult",
    "run_trial",
    "AreaMethod",
]

SERVER = -1
_CHUNK = 1024


@dataclass(frozen=True)
class StationaryIID:
    """IID event indices with fixed probabilities; one unit of time per event."""

    p: tuple
    p_s: float

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        object.__setattr__(self, "p", p)
        if any(v <= 0 for v in p) or self.p_s < 0:
            raise ConfigurationError("event probabilities must be positive")
        if abs(sum(p) + self.p_s - 1.0) > 1e-9:
            raise ConfigurationError(f"event probabilities sum to {sum(p) + self.p_s}, not 1")

    @property
    def n(self) -> int:
        return len(self.p)

    def probabilities(self):
        return np.asarray(self.p), self.p_s

    def client_only(self) -> "StationaryIID":
        total = sum(self.p)
        return StationaryIID(tuple(v / total for v in self.p), 0.0)


@dataclass(frozen=True)
class PoissonRates:
    """Independent exponential interarrivals with client rates and a server rate."""

    rates: tuple
    rate_s: float

    def __post_init__(self):
        rates = tuple(float(v) for v in self.rates)
        object.__setattr__(self, "rates", rates)
        if any(v <= 0 for v in rates) or self.rate_s < 0:
            raise ConfigurationError("rates must be positive")

    @property
    def n(self) -> int:
        return len(self.rates)

    @property
    def total_rate(self) -> float:
        return sum(self.rates) + self.rate_s

    def probabilities(self):
        lam_bar = self.total_rate
        return np.asarray(self.rates) / lam_bar, self.rate_s / lam_bar

    def as_stationary(self) -> StationaryIID:
        p, p_s = self.probabilities()
        return StationaryIID(tuple(p), p_s)

    def client_only(self) -> "PoissonRates":
        return PoissonRates(self.rates, 0.0)


@dataclass(frozen=True)
class DeterministicCycle:
    """Fixed repeating order of event indices (``SERVER`` for the server)."""

    order: tuple
    n_clients: Optional[int] = None

    def __post_init__(self):
        order = tuple(int(v) for v in self.order)
        object.__setattr__(self, "order", order)
        if not order:
            raise ConfigurationError("empty event cycle")
        if self.n_clients is None:
            object.__setattr__(self, "n_clients", max(order) + 1)

    @property
    def n(self) -> int:
        return self.n_clients

    def probabilities(self):
        counts = np.bincount([i for i in self.order if i != SERVER], minlength=self.n)
        return counts / len(self.order), self.order.count(SERVER) / len(self.order)

    def client_only(self) -> "DeterministicCycle":
        return DeterministicCycle(tuple(i for i in self.order if i != SERVER), self.n_clients)


def stationary_probabilities(model, criterion=None):
    """Event probabilities ``(p, p_s)`` seen by the server's iteration counter.

    Under a buffered criterion the server events are the aggregations, one
    per ``delta`` client messages.
    """
    if isinstance(criterion, protocol.Buffered):
        p, _ = model.client_only().probabilities()
        d = criterion.delta
        return np.asarray(p) * d / (d + 1.0), 1.0 / (d + 1.0)
    p, p_s = model.probabilities()
    return np.asarray(p), float(p_s)


def _draw(model, u: np.ndarray):
    """Map uniform pairs ``u[:, 0]`` (time) and ``u[:, 1]`` (index) to events."""
    p, p_s = model.probabilities()
    cdf = np.cumsum(np.append(p, p_s))
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, u[:, 1], side="right")
    idx = np.minimum(idx, len(p))
    idx[idx == len(p)] = SERVER
    if isinstance(model, PoissonRates):
        dt = -np.log1p(-u[:, 0]) / model.total_rate
    else:
        dt = np.ones(len(u))
    return idx, dt


def next_event(model, rng: np.random.Generator, k: int = 0):
    """Draw one ``(index, dt)``.  ``k`` is the position within a deterministic cycle."""
    if isinstance(model, DeterministicCycle):
        return model.order[k % len(model.order)], 1.0
    idx, dt = _draw(model, rng.random((1, 2)))
    return int(idx[0]), float(dt[0])


class EventStream:
    """Reproducible event sequence for ``(seed, "events")``.

    Draws are consumed row by row from blocks of uniforms, so the sequence
    does not depend on the block size or on how far the stream is read.
    """

    def __init__(self, model, seed: int):
        self.model = model
        self.rng = stream(seed, "events")
        self.position = 0
        self._idx = np.empty(0, dtype=np.int64)
        self._dt = np.empty(0)
        self._j = 0

    def __iter__(self):
        return self

    def __next__(self):
        if isinstance(self.model, DeterministicCycle):
            ev = next_event(self.model, self.rng, self.position)
            self.position += 1
            return ev
        if self._j >= self._idx.size:
            self._idx, self._dt = _draw(self.model, self.rng.random((_CHUNK, 2)))
            self._j = 0
        ev = int(self._idx[self._j]), float(self._dt[self._j])
        self._j += 1
        self.position += 1
        return ev

    def take(self, count: int):
        out = [next(self) for _ in range(count)]
        idx = np.array([e[0] for e in out], dtype=np.int64)
        dt = np.array([e[1] for e in out])
        return idx, dt


@dataclass
class EventLog:
    k: list = field(default_factory=list)
    event: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def append(self, k: int, event: int, wall_time: float) -> None:
        self.k.append(int(k))
        self.event.append(int(event))
        self.wall_time.append(float(wall_time))

    def __len__(self) -> int:
        return len(self.k)

    @property
    def aggregations(self) -> int:
        return self.event.count(SERVER)

    @property
    def client_messages(self) -> int:
        return len(self.event) - self.aggregations

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "event", "wall_time"])
            for k, e, t in zip(self.k, self.event, self.wall_time):
                w.writerow([k, "s" if e == SERVER else e + 1, repr(t)])


@dataclass
class TrialSetup:
    """Everything needed to run one seeded trial."""

    problem: object
    method: str = "area"
    schedule: object = None
    event_model: object = None
    criterion: object = field(default_factory=lambda: protocol.Buffered(4))
    M: int = 1
    noise: NoiseModel = NO_NOISE
    K: Optional[int] = None
    t_h: Optional[float] = None
    seed: int = 0
    x0: Optional[np.ndarray] = None
    cadence: int = 50
    sample_count: int = 4
    server_lr: float = 1.0
    record_states: bool = False

    def __post_init__(self):
        if self.K is None and self.t_h is None:
            raise ConfigurationError("either K or t_h must be given")
        if self.event_model is not None and self.event_model.n != self.problem.n:
            raise ConfigurationError(
                f"event model has {self.event_model.n} clients, problem has {self.problem.n}")
        if self.cadence < 1:
            raise ConfigurationError("metric cadence must be >= 1")

    def initial_model(self) -> np.ndarray:
        if self.x0 is None:
            return np.zeros(self.problem.dim)
        return np.array(self.x0, dtype=np.float64).ravel()

    def arrival_model(self):
        """Event model actually sampled: server events only under ``PoissonServer``."""
        if isinstance(self.criterion, protocol.PoissonServer):
            return self.event_model
        return self.event_model.client_only()


@dataclass
class TrialResult:
    events: EventLog
    metrics: MetricsSeries
    x_s: np.ndarray
    diverged: bool = False
    method_state: object = None
    trajectory: Optional[list] = None


class AreaMethod:
    """AREA driven through the message-passing state machines."""

    name = "area"

    def __init__(self, setup: TrialSetup):
        self.setup = setup
        prob = setup.problem
        x0 = setup.initial_model()
        self.server = protocol.server_init(x0, setup.schedule, setup.criterion, prob.n)
        xb, a0 = self.server.broadcast()
        self.clients = [protocol.client_init(i, xb, a0, setup.M, prob.objectives[i], setup.noise)
                        for i in range(prob.n)]

    @property
    def x_s(self):
        return self.server.x_s

    @property
    def k(self) -> int:
        return self.server.k

    def on_client(self, i: int) -> None:
        c = self.clients[i]
        msg = protocol.client_round(c, stream(self.setup.seed, "noise", i, c.rounds))
        x_s, alpha = protocol.server_handle_client(self.server, msg)
        protocol.client_receive(c, x_s, alpha)

    def aggregate(self) -> None:
        protocol.server_aggregate(self.server)

    def pending_messages(self) -> int:
        return self.server.messages_since_aggregation

    def memory_mean(self) -> np.ndarray:
        return np.mean([c.y for c in self.clients], axis=0)


def _make_method(setup: TrialSetup):
    if setup.method == "area":
        return AreaMethod(setup)
    from . import baselines

    return baselines.make_method(setup)


def run_trial(setup: TrialSetup, observer=None) -> TrialResult:
    """Replay one trial and record its event log and metrics.

    Stops after ``K`` iterations or at wall time ``t_h``, whichever comes
    first.  A non-finite model or training loss stops the trial and appends
    a row with an infinite loss.  ``observer(method)`` is called after initialization and
    after every iteration.
    """
    if setup.method == "s-fedavg":
        from .baselines import run_sync_fedavg

        return run_sync_fedavg(setup)

    prob = setup.problem
    method = _make_method(setup)
    log = EventLog()
    metrics = MetricsSeries()
    criterion = setup.criterion
    K = setup.K if setup.K is not None else math.inf
    t_h = setup.t_h if setup.t_h is not None else math.inf
    events = EventStream(setup.arrival_model(), setup.seed)
    traj = [method.x_s.copy()] if setup.record_states else None

    def snapshot(t):
        loss = prob.loss(method.x_s)
        if not math.isfinite(loss):
            raise DivergenceError("training loss is not finite")
        metrics.append(t, method.k, loss, prob.accuracy(method.x_s))

    def record(event, t):
        log.append(method.k, event, t)
        if traj is not None:
            traj.append(method.x_s.copy())
        if observer is not None:
            observer(method)

    def aggregate(t):
        method.aggregate()
        if not np.all(np.isfinite(method.x_s)):
            raise DivergenceError("global model is not finite")
        record(SERVER, t)
        snapshot(t)

    if observer is not None:
        observer(method)
    t = now = 0.0
    snapshot(0.0)
    next_tick = criterion.period if isinstance(criterion, protocol.Periodic) else math.inf
    diverged = False
    try:
        while method.k < K:
            j, dt = next(events)
            t_next = t + dt
            while next_tick <= t_next and next_tick <= t_h and method.k < K:
                now = next_tick
                aggregate(now)
                next_tick += criterion.period
            if t_next > t_h or method.k >= K:
                break
            t = now = t_next
            if j == SERVER:
                aggregate(t)
                continue
            method.on_client(j)
            record(j, t)
            if isinstance(criterion, protocol.Buffered) and method.pending_messages() >= criterion.delta \
                    and method.k < K:
                aggregate(t)
            elif method.k % setup.cadence == 0:
                snapshot(t)
    except DivergenceError:
        diverged = True
        metrics.append(now, method.k, math.inf, float("nan"))
    if not diverged and (metrics.k[-1] != method.k or metrics.wall_time[-1] != now):
        snapshot(now)
    return TrialResult(log, metrics, method.x_s.copy(), diverged, method, traj)
