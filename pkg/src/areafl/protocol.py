"""AREA server and client state machines.

The server keeps the global model ``x_s``, an aggregator ``u_s`` and the
iteration counter ``k``.  A client keeps one memory vector ``y`` (its last
sent local model) and the model/step pair it last received.  A client
round runs ``M`` local SGD steps and sends the residual ``x^M - y``; the
server adds ``residual / n`` to ``u_s`` and folds ``u_s`` into ``x_s``
whenever the aggregation criterion fires.

Since ``u_s`` starts at 0 and every ``y_i`` starts at ``x_s``, the sum
``x_s + u_s`` always equals the mean of the client memories.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import NO_NOISE, ConfigurationError, NoiseModel, local_sgd
from .schedules import StepSchedule

__all__ = [
    "ProtocolError",
    "Buffered",
    "PoissonServer",
    "Periodic",
    "ServerState",
    "ClientState",
    "ClientMessage",
    "server_init",
    "server_handle_client",
    "server_aggregate",
    "server_stop",
    "client_init",
    "client_receive",
    "client_round",
    "write_checkpoint",
    "read_checkpoint",
]


class ProtocolError(RuntimeError):
    """Malformed message or out-of-order protocol step."""


@dataclass(frozen=True)
class Buffered:
    """Aggregate on every ``delta``-th client message since the last aggregation."""

    delta: int = 4

    def __post_init__(self):
        if self.delta < 1:
            raise ConfigurationError("buffer size delta must be >= 1")


@dataclass(frozen=True)
class PoissonServer:
    """Aggregate on server events drawn by the event model."""


@dataclass(frozen=True)
class Periodic:
    """Aggregate at wall-clock multiples of ``period``."""

    period: float

    def __post_init__(self):
        if not self.period > 0:
            raise ConfigurationError("aggregation period must be positive")


@dataclass
class ServerState:
    x_s: np.ndarray
    u_s: np.ndarray
    n: int
    schedule: StepSchedule
    criterion: object = field(default_factory=PoissonServer)
    k: int = 0
    messages_since_aggregation: int = 0
    stopped: bool = False

    @property
    def dim(self) -> int:
        return self.x_s.size

    def broadcast(self):
        return self.x_s.copy(), self.schedule(0)

    def criterion_due(self) -> bool:
        """True when a buffered criterion has collected enough messages."""
        return isinstance(self.criterion, Buffered) and self.messages_since_aggregation >= self.criterion.delta


@dataclass(frozen=True)
class ClientMessage:
    sender: int
    m: np.ndarray


@dataclass
class ClientState:
    id: int
    y: np.ndarray
    cached_x_s: np.ndarray
    cached_alpha: float
    M: int
    objective: object
    noise: NoiseModel = NO_NOISE
    rounds: int = 0


def server_init(x0, schedule: StepSchedule, criterion, n: int) -> ServerState:
    """Initial server state; ``state.broadcast()`` gives ``(x0, alpha_0)``."""
    if n < 1:
        raise ConfigurationError("need at least one client")
    x0 = np.array(x0, dtype=np.float64, copy=True).ravel()
    return ServerState(x_s=x0, u_s=np.zeros_like(x0), n=int(n), schedule=schedule, criterion=criterion)


def server_handle_client(s: ServerState, msg: ClientMessage):
    """Accumulate a client residual and return the reply ``(x_s, alpha)``.

    The reply carries the current global model and the step size at the
    incremented counter.
    """
    if s.stopped:
        raise ProtocolError("server has stopped")
    if not 0 <= msg.sender < s.n:
        raise ProtocolError(f"unknown sender {msg.sender}")
    m = np.asarray(msg.m, dtype=np.float64)
    if m.shape != s.u_s.shape:
        raise ProtocolError(f"message has shape {m.shape}, expected {s.u_s.shape}")
    s.u_s += m / s.n
    s.k += 1
    s.messages_since_aggregation += 1
    return s.x_s.copy(), s.schedule(s.k)


def server_aggregate(s: ServerState) -> None:
    """Fold the aggregator into the global model and reset it."""
    if s.stopped:
        raise ProtocolError("server has stopped")
    s.x_s += s.u_s
    s.u_s[:] = 0.0
    s.k += 1
    s.messages_since_aggregation = 0


def server_stop(s: ServerState) -> np.ndarray:
    """Mark the run as finished and return the final global model.

    Results of rounds still in flight are never delivered.
    """
    s.stopped = True
    return s.x_s.copy()


def client_init(i: int, x0, alpha0: float, M: int, objective, noise: NoiseModel = NO_NOISE) -> ClientState:
    if M < 1:
        raise ConfigurationError("number of local steps must be >= 1")
    x0 = np.array(x0, dtype=np.float64, copy=True).ravel()
    return ClientState(id=i, y=x0.copy(), cached_x_s=x0, cached_alpha=float(alpha0), M=int(M),
                       objective=objective, noise=noise)


def client_receive(c: ClientState, x_s, alpha: float) -> None:
    c.cached_x_s = np.array(x_s, dtype=np.float64, copy=True)
    c.cached_alpha = float(alpha)


def client_round(c: ClientState, rng: Optional[np.random.Generator] = None) -> ClientMessage:
    """Run one local round from the cached model and return the residual message.

    ``rng`` drives the gradient noise of this round.  Raises
    :class:`~areafl.core.DivergenceError` if the local model blows up.
    """
    xM = local_sgd(c.objective, c.noise, c.cached_x_s, c.cached_alpha, c.M, rng)
    msg = ClientMessage(sender=c.id, m=xM - c.y)
    c.y = xM
    c.rounds += 1
    return msg


def write_checkpoint(path, x) -> None:
    """Write ``x`` as ``u64 d`` followed by ``d`` little-endian float64 values."""
    x = np.ascontiguousarray(x, dtype="<f8").ravel()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", x.size))
        fh.write(x.tobytes())


def read_checkpoint(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ProtocolError("checkpoint is truncated")
    (d,) = struct.unpack("<Q", data[:8])
    if len(data) != 8 + 8 * d:
        raise ProtocolError(f"checkpoint declares d={d} but holds {(len(data) - 8) / 8:g} values")
    return np.frombuffer(data, dtype="<f8", offset=8).astype(np.float64)
