"""Independent checks of the AREA implementation.

The message-passing protocol is compared against the aggregator-free
recursion in which a client event moves the client's pending local model
into its memory and starts a new round from the current global model, and
a server event sets the global model to the mean of the memories.  Both
consume noise keyed by ``(seed, "noise", client, round)`` so their
trajectories coincide up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import protocol
from .core import NO_NOISE, NoiseModel, local_sgd
from .data import quadratic_suite
from .rng import stream
from .scheduler import (SERVER, AreaMethod, DeterministicCycle, PoissonRates, TrialSetup, run_trial,
                        stationary_probabilities)
from .schedules import TheoremOne

__all__ = [
    "DerivedIterates",
    "derived_init",
    "derived_step",
    "replay_derived",
    "check_aggregator_identity",
    "check_equivalence",
    "gd_reduction_gap",
    "bias_demo",
    "RateStudy",
    "strongly_convex_rate",
    "nonsmooth_rate",
    "lambda_grid_gap",
    "run_suite",
]


@dataclass
class DerivedIterates:
    x: np.ndarray  # (n, d) pending local models
    y: np.ndarray  # (n, d) client memories
    x_s: np.ndarray
    schedule: object
    problem: object
    M: int = 1
    noise: NoiseModel = NO_NOISE
    seed: int = 0
    k: int = 0
    rounds: list = field(default_factory=list)

    def _round(self, i: int, alpha: float) -> np.ndarray:
        out = local_sgd(self.problem.objectives[i], self.noise, self.x_s, alpha, self.M,
                        stream(self.seed, "noise", i, self.rounds[i]))
        self.rounds[i] += 1
        return out


def derived_init(problem, x0, schedule, M: int = 1, noise: NoiseModel = NO_NOISE, seed: int = 0) -> DerivedIterates:
    n = problem.n
    x0 = np.array(x0, dtype=np.float64).ravel()
    st = DerivedIterates(x=np.empty((n, x0.size)), y=np.tile(x0, (n, 1)), x_s=x0.copy(), schedule=schedule,
                         problem=problem, M=M, noise=noise, seed=seed, rounds=[0] * n)
    alpha0 = schedule(0)
    for i in range(n):
        st.x[i] = st._round(i, alpha0)
    return st


def derived_step(st: DerivedIterates, event: int) -> DerivedIterates:
    """Apply the recursion for one event (client index or ``SERVER``).

    The step size of a new round is taken at the incremented counter, the
    same indexing the server uses for its replies.
    """
    if event == SERVER:
        st.x_s = st.y.mean(axis=0)
        st.k += 1
        return st
    i = int(event)
    st.k += 1
    st.y[i] = st.x[i]
    st.x[i] = st._round(i, st.schedule(st.k))
    return st


def replay_derived(setup: TrialSetup, events) -> list:
    """Run the derived recursion over an event sequence; returns the ``x_s`` trajectory."""
    st = derived_init(setup.problem, setup.initial_model(), setup.schedule, setup.M, setup.noise, setup.seed)
    traj = [st.x_s.copy()]
    for e in events:
        derived_step(st, e)
        traj.append(st.x_s.copy())
    return traj


def check_aggregator_identity(setup: TrialSetup) -> float:
    """Max over iterations of ``||x_s + u_s - mean(y)|| / (1 + ||mean(y)||)``."""
    worst = [0.0]

    def observe(method: AreaMethod):
        ybar = method.memory_mean()
        gap = np.linalg.norm(method.server.x_s + method.server.u_s - ybar) / (1.0 + np.linalg.norm(ybar))
        worst[0] = max(worst[0], float(gap)) if np.isfinite(gap) else math.inf

    run_trial(setup, observer=observe)
    return worst[0]


def check_equivalence(setup: TrialSetup) -> float:
    """Max coordinate gap between the protocol and derived ``x_s`` trajectories."""
    setup.record_states = True
    res = run_trial(setup)
    derived = replay_derived(setup, res.events.event)
    a = np.asarray(res.trajectory)
    b = np.asarray(derived)
    return float(np.max(np.abs(a - b)))


def gd_reduction_gap(problem, alpha: float, cycles: int, x0=None) -> float:
    """Largest gap between round-robin AREA and gradient descent.

    With exact gradients, one local step and the cycle ``(1, ..., n, s)``,
    the global model after cycles ``2c - 1`` and ``2c`` equals the ``c``-th
    gradient descent iterate: residuals computed from a new model reach the
    server one cycle after that model is handed out.
    """
    from .schedules import Constant

    n = problem.n
    setup = TrialSetup(problem, schedule=Constant(alpha),
                       event_model=DeterministicCycle(tuple(range(n)) + (SERVER,), n),
                       criterion=protocol.PoissonServer(), K=cycles * (n + 1), x0=x0, record_states=True)
    res = run_trial(setup)
    traj = np.asarray(res.trajectory)[n + 1::n + 1]
    gd = [setup.initial_model()]
    for _ in range((cycles + 1) // 2):
        gd.append(gd[-1] - alpha * problem.grad(gd[-1]))
    expected = np.asarray([gd[(c + 1) // 2] for c in range(1, cycles + 1)])
    return float(np.max(np.abs(traj - expected)))


def bias_demo(rates=(10.0, 1.0), centers=(-1.0, 1.0), K: int = 100_000, seed: int = 0):
    """Final ``||x_s - x*||`` of AREA and of AS-FedAvg with ``delta = 1``.

    Two 1-D clients ``f_i = (x - c_i)^2 / 2`` with exponential arrivals at
    the given rates, exact gradients and the decreasing strongly convex
    schedule.  Returns ``(area_err, naive_err, naive_limit)``.
    """
    prob = quadratic_suite([np.ones(1)] * len(centers), [[c] for c in centers])
    model = PoissonRates(tuple(rates), 1.0)
    crit = protocol.Buffered(1)
    p, p_s = stationary_probabilities(model, crit)
    sched = TheoremOne.from_constants(1.0, 1.0, 1, min(p.min(), p_s))
    x_star = prob.constants.x_star
    out = []
    for method in ("area", "as-fedavg"):
        res = run_trial(TrialSetup(prob, method=method, schedule=sched, event_model=model, criterion=crit,
                                   K=K, seed=seed))
        out.append(res.x_s)
    return (float(np.linalg.norm(out[0] - x_star)), float(np.linalg.norm(out[1] - x_star)), out[1])


# -- rate studies ---------------------------------------------------------------


@dataclass
class RateStudy:
    slope: float
    ks: np.ndarray
    errors: np.ndarray
    band: tuple = (-math.inf, math.inf)

    @property
    def passed(self) -> bool:
        return self.band[0] <= self.slope <= self.band[1]


def strongly_convex_rate(M: int = 1, sigma: float = 3.0, trials: int = 200, K: int = 100_000, seed: int = 0,
                         window=(10_000, 100_000), band=(-1.35, -0.65)) -> RateStudy:
    """Slope of the mean squared distance under the decreasing schedule.

    Eight 4-D quadratics with spectrum in ``[1, 10]``, uniform event
    probabilities ``1/9`` (server included), Gaussian gradient noise.
    """
    from .batched import run_batched_area
    from .data import synthetic_quadratic_suite
    from .scheduler import StationaryIID

    prob = synthetic_quadratic_suite(8, 4, 1.0, 10.0, 1.0, stream(seed, "suite"))
    model = StationaryIID((1 / 9,) * 8, 1 / 9)
    sched = TheoremOne.from_constants(1.0, 10.0, M, 1 / 9)
    ks = np.unique(np.round(np.logspace(math.log10(window[0]), math.log10(window[1]), 11)).astype(int))
    res = run_batched_area(prob, model, sched, M=M, sigma=sigma, K=K, trials=trials, seed=seed, record_at=ks)
    from .metrics import rate_fit

    return RateStudy(rate_fit(res.mean_sq_dist, res.ks, window), res.ks, res.mean_sq_dist, band)


def nonsmooth_rate(Ks=(100, 1_000, 10_000, 100_000), sigma: float = 0.0, trials: int = 200, seed: int = 0,
                   centers=(-3.0, 0.0, 0.0, 1.0), x0: float = 5.0, band=(-0.70, -0.30)) -> RateStudy:
    """Slope of the mean optimality gap of the ergodic average against ``K``.

    Four 1-D absolute-deviation clients, event probabilities ``0.2`` each
    (server included), and for every ``K`` the constant step tuned to ``K``.
    """
    from .batched import run_batched_area
    from .data import absdev_suite
    from .metrics import rate_fit
    from .scheduler import StationaryIID
    from .schedules import ConstantTheoremTwo

    prob = absdev_suite(centers, sigma)
    n = len(centers)
    model = StationaryIID((1.0 / (n + 1),) * n, 1.0 / (n + 1))
    p, p_s = model.probabilities()
    c = np.asarray(centers)
    f_star = float(np.mean(np.abs(np.median(c) - c)))
    gaps = []
    for K in Ks:
        dist0_sq = float((x0 - prob.constants.x_star[0]) ** 2)
        sched = ConstantTheoremTwo.from_constants(K, p_s, float(np.mean(1.0 / p)), sigma, 1.0, 1, dist0_sq)
        res = run_batched_area(prob, model, sched, M=1, sigma=sigma, K=K, trials=trials, seed=seed, x0=[x0],
                               ergodic=True)
        xbar = res.ergodic[:, 0]
        gaps.append(float(np.mean(np.mean(np.abs(xbar[:, None] - c[None, :]), axis=1)) - f_star))
    ks = np.asarray(Ks)
    gaps = np.asarray(gaps)
    return RateStudy(rate_fit(gaps, ks), ks, gaps, band)


def lambda_grid_gap(lam, points: int = 200) -> float:
    """Distance, in grid steps, between the grid minimizer of the bound and the closed form.

    The bound is evaluated on a log grid over ``[lam*/10, 10 lam*]``; only
    the factor depending on the server rate is needed.
    """
    from .schedules import optimal_lambda_s

    lam = np.asarray(lam, dtype=np.float64)
    star = optimal_lambda_s(lam)
    grid = np.logspace(math.log10(star / 10), math.log10(star * 10), points)
    total = lam.sum() + grid
    p_s = grid / total
    q_bar = total * np.mean(1.0 / lam)
    factor = 1.0 / p_s + 2.0 * q_bar
    step = math.log(grid[1] / grid[0])
    return abs(math.log(grid[int(np.argmin(factor))] / star)) / step


# -- suites ---------------------------------------------------------------------


def _row(name, value, tol, passed=None):
    ok = bool(value <= tol) if passed is None else bool(passed)
    return {"check": name, "value": float(value), "tolerance": tol, "passed": ok}


def _invariant_rows():
    from .data import synthetic_quadratic_suite
    from .scheduler import StationaryIID
    from .schedules import Constant

    rows = []
    for seed, (n, M, sigma, poisson) in enumerate([(2, 1, 0.0, True), (8, 5, 1.0, False), (32, 1, 1.0, True)]):
        prob = synthetic_quadratic_suite(n, 3, 1.0, 4.0, 1.0, stream(seed, "suite"))
        model = PoissonRates(tuple(np.linspace(1, 5, n)), 2.0) if poisson else StationaryIID((0.5 / n,) * n, 0.5)
        setup = TrialSetup(prob, schedule=Constant(0.05), event_model=model, criterion=protocol.PoissonServer(),
                           M=M, noise=NoiseModel("gaussian", sigma), K=2000, seed=seed)
        rows.append(_row(f"aggregator identity n={n} M={M}", check_aggregator_identity(setup), 1e-9))
        setup.record_states = False
        rows.append(_row(f"protocol vs derived n={n} M={M}", check_equivalence(setup), 1e-12))
    prob = synthetic_quadratic_suite(4, 3, 1.0, 4.0, 1.0, stream(0, "suite"))
    rows.append(_row("round-robin gradient descent", gd_reduction_gap(prob, 0.1, 200), 1e-12))
    return rows


def _oracle_rows():
    from .core import AbsoluteDeviation, MultinomialLogReg, Quadratic
    from .schedules import optimal_lambda_s, theorem1_alpha, theorem1_D, theorem2_alpha

    rng = stream(0, "oracle")
    rows = []

    def fd_gap(obj, x, h=1e-6):
        g = obj.value_grad(x)[1]
        fd = np.array([(obj.value_grad(x + h * e)[0] - obj.value_grad(x - h * e)[0]) / (2 * h)
                       for e in np.eye(x.size)])
        return float(np.max(np.abs(fd - g)))

    A = rng.standard_normal((4, 4))
    rows.append(_row("quadratic gradient (finite differences)",
                     fd_gap(Quadratic(A @ A.T + np.eye(4), rng.standard_normal(4)), rng.standard_normal(4)), 1e-6))
    rows.append(_row("absolute deviation subgradient (finite differences)",
                     fd_gap(AbsoluteDeviation(np.zeros(3)), np.array([0.3, -0.7, 1.1])), 1e-6))
    feats = rng.random((20, 5))
    lr = MultinomialLogReg(feats, rng.integers(0, 3, 20), 3, 1e-3)
    rows.append(_row("softmax regression gradient (finite differences)", fd_gap(lr, rng.standard_normal(15)), 1e-6))

    worst = 0.0
    for _ in range(100):
        mu, M = rng.uniform(0.1, 2), int(rng.integers(1, 10))
        L = mu * rng.uniform(1, 50)
        g = 2 * mu * L / (mu + L)
        terms = [2 / (M * (mu + L))]
        if M > 1:
            terms += [g / (L * L * (M - 1)), (M * g * g / (64 * L**4 * (M - 1) ** 3)) ** 0.5,
                      (g / (32 * L**4 * (M - 1) ** 3)) ** (1 / 3)]
        D = min(terms)
        k, p = int(rng.integers(0, 10**6)), rng.uniform(0.01, 0.5)
        K, ps, q, s, B = int(rng.integers(1, 10**6)), rng.uniform(0.01, 1), rng.uniform(1, 100), rng.uniform(0, 3), \
            rng.uniform(0.1, 3)
        lam = rng.uniform(0.1, 10, 16)
        worst = max(worst,
                    abs(theorem1_D(mu, L, M) - D) / D,
                    abs(float(theorem1_alpha(k, p, M, g, D)) - 1 / (p * M * g * k / 48 + 1 / D)) * (p * M * g * k / 48 + 1 / D),
                    abs(theorem2_alpha(K, ps, q, s, B, M, 1.0) - ((1 / ps + 2 * q) / ((s * s + (M + 1) * B * B / 2) * M * K)) ** 0.5)
                    / theorem2_alpha(K, ps, q, s, B, M, 1.0),
                    abs(optimal_lambda_s(lam) - (lam.sum() / (2 * np.mean(1 / lam))) ** 0.5) / optimal_lambda_s(lam))
    rows.append(_row("schedule formulas (relative error, 100 draws)", worst, 1e-12))
    return rows


def _rate_rows():
    rows = []
    for M in (1, 5):
        st = strongly_convex_rate(M=M, trials=100)
        rows.append(_row(f"decreasing schedule slope M={M}", st.slope, list(st.band), st.passed))
    st = nonsmooth_rate(trials=100)
    rows.append(_row("constant schedule slope (ergodic gap)", st.slope, list(st.band), st.passed))
    rng = stream(0, "lambda")
    gap = max(lambda_grid_gap(np.exp(rng.uniform(math.log(0.1), math.log(10), 16))) for _ in range(10))
    rows.append(_row("optimal server rate (grid steps)", gap, 1.0))
    return rows


SUITES = {"invariants": _invariant_rows, "oracle": _oracle_rows, "rates": _rate_rows}


def run_suite(name: str = "all") -> list:
    """Run a named verification suite; returns one dict per check."""
    if name == "all":
        return [r for key in ("invariants", "oracle", "rates") for r in SUITES[key]()]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from all, {', '.join(SUITES)}")
    return SUITES[name]()
