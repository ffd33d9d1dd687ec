"""Experiment configuration, multi-trial runs and grid sweeps.

Configurations are INI files read with :mod:`configparser`.  Every section
is optional except ``[experiment]``; missing keys take the defaults below.

.. code-block:: ini

    [experiment]
    config_version = 1
    method = area          ; area | s-fedavg | as-fedavg | fedbuff
    trials = 3
    seed = 0
    K = 100000             ; iteration budget, optional if t_h is set
    t_h = 15               ; wall-clock horizon, optional if K is set
    cadence = 50           ; metric snapshot every this many iterations
    target_accuracy = 0.8

    [problem]
    suite = logreg         ; quadratic | absdev | logreg
    n = 16
    x0 = 0                 ; scalar (broadcast) or comma list

    ; quadratic: d, mu, L, zeta, heterogeneous (per-client spectra)
    ; absdev: centers (comma list)
    ; logreg: data_dir (else $AREA_DATA_DIR), train_samples,
    ;         dirichlet_a, ridge, weighting = sample | uniform

    [client]
    M = 1
    noise = minibatch      ; none | gaussian | minibatch
    sigma = 0
    batch_size = 32

    [scheduler]
    events = poisson       ; poisson | iid | cycle
    rates = 10             ; scalar, comma list or normal:MEAN:STD
    rate_s = 0
    p = ...                ; iid: comma list; p_s
    order = 1,2,s          ; cycle
    criterion = buffered   ; buffered | poisson | periodic
    delta = 4
    period = 1

    [schedule]
    kind = constant        ; constant | theorem1 | theorem2 | inverse_k
    alpha = 0.1
    c0 = 1

    [baseline]
    sample_count = 4
    server_lr = 1

The problem (data partition, synthetic suite, drawn rates) is fixed by the
master seed; trials differ in their event and noise streams.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import protocol
from .core import ConfigurationError, NoiseModel
from .data import (absdev_suite, dirichlet_partition, load_mnist, logreg_problem, quadratic_suite,
                   synthetic_quadratic_suite)
from .metrics import SENTINEL_GT1, MetricsSeries, compute_rho, value_at
from .rng import stream
from .scheduler import (SERVER, DeterministicCycle, PoissonRates, StationaryIID, TrialSetup, run_trial,
                        stationary_probabilities)
from .schedules import Constant, ConstantTheoremTwo, InverseK, TheoremOne, optimal_lambda_s

__all__ = [
    "CONFIG_VERSION",
    "ExperimentConfig",
    "ExperimentReport",
    "parse_grid",
    "run_experiment",
    "run_sweep",
    "report_constants",
    "trial_seed",
]

CONFIG_VERSION = 1
METHODS = ("area", "s-fedavg", "as-fedavg", "fedbuff")

_DEFAULTS = {
    "experiment": {"config_version": "1", "method": "area", "trials": "1", "seed": "0", "cadence": "50",
                   "target_accuracy": "0.8"},
    "problem": {"suite": "quadratic", "n": "8", "x0": "0", "d": "4", "mu": "1", "L": "10", "zeta": "1",
                "heterogeneous": "false", "centers": "-3,0,0,1", "train_samples": "2000", "dirichlet_a": "0.1",
                "ridge": "1e-3", "weighting": "sample"},
    "client": {"M": "1", "noise": "none", "sigma": "0", "batch_size": "32"},
    "scheduler": {"events": "poisson", "rates": "10", "rate_s": "0", "criterion": "buffered", "delta": "4",
                  "period": "1"},
    "schedule": {"kind": "constant", "alpha": "0.1", "c0": "1"},
    "baseline": {"sample_count": "4", "server_lr": "1"},
}


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.replace(" ", "").split(",") if v], dtype=np.float64)


def trial_seed(master: int, trial: int) -> int:
    """Seed of trial ``trial``, derived from the master seed."""
    return int(np.random.SeedSequence([master, trial]).generate_state(1, np.uint64)[0] >> 1)


@dataclass
class ExperimentConfig:
    """A validated configuration together with its source text."""

    text: str
    parser: configparser.ConfigParser
    base_dir: Path = Path(".")

    @classmethod
    def from_string(cls, text: str, base_dir=".") -> "ExperimentConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), strict=False)
        cp.optionxform = str
        cp.read_dict(_DEFAULTS)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"cannot parse config: {exc}") from None
        cfg = cls(text, cp, Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_string(path.read_text(), path.parent)

    def get(self, section: str, key: str, fallback=None) -> Optional[str]:
        return self.parser.get(section, key, fallback=fallback)

    def getfloat(self, section: str, key: str) -> float:
        return self.parser.getfloat(section, key)

    def getint(self, section: str, key: str) -> int:
        return self.parser.getint(section, key)

    def with_overrides(self, **values) -> "ExperimentConfig":
        """Copy with ``section.key`` (or bare ``alpha``) overrides appended to the text."""
        lines = [self.text.rstrip("\n"), "", "; overrides"]
        for name, v in values.items():
            section, key = _override_target(name)
            lines += [f"[{section}]", f"{key} = {v}"]
        return ExperimentConfig.from_string("\n".join(lines) + "\n", self.base_dir)

    # -- validation -------------------------------------------------------

    @property
    def method(self) -> str:
        return self.get("experiment", "method")

    @property
    def K(self) -> Optional[int]:
        v = self.get("experiment", "K")
        return None if v in (None, "") else int(float(v))

    @property
    def t_h(self) -> Optional[float]:
        v = self.get("experiment", "t_h")
        return None if v in (None, "") else float(v)

    def validate(self) -> None:
        version = self.getint("experiment", "config_version")
        if version != CONFIG_VERSION:
            raise ConfigurationError(f"config_version {version} is not supported (expected {CONFIG_VERSION})")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.K is None and self.t_h is None:
            raise ConfigurationError("either experiment.K or experiment.t_h must be set")
        if self.getint("experiment", "trials") < 1:
            raise ConfigurationError("experiment.trials must be >= 1")
        suite = self.get("problem", "suite")
        if suite not in ("quadratic", "absdev", "logreg"):
            raise ConfigurationError(f"unknown problem suite {suite!r}")
        if self.getint("client", "M") < 1:
            raise ConfigurationError("client.M must be >= 1")
        if self.get("scheduler", "events") not in ("poisson", "iid", "cycle"):
            raise ConfigurationError(f"unknown event model {self.get('scheduler', 'events')!r}")
        if self.get("scheduler", "criterion") not in ("buffered", "poisson", "periodic"):
            raise ConfigurationError(f"unknown criterion {self.get('scheduler', 'criterion')!r}")
        kind = self.get("schedule", "kind")
        if kind not in ("constant", "theorem1", "theorem2", "inverse_k"):
            raise ConfigurationError(f"unknown schedule {kind!r}")
        if kind == "theorem1" and suite == "quadratic" and self.parser.getboolean("problem", "heterogeneous"):
            raise ConfigurationError("the strongly convex schedule needs constants shared by all clients")
        if kind == "theorem2" and self.K is None:
            raise ConfigurationError("the constant nonsmooth schedule needs experiment.K")
        NoiseModel(self.get("client", "noise"), self.getfloat("client", "sigma"),
                   self.getint("client", "batch_size"))

    # -- builders ---------------------------------------------------------

    def build_problem(self):
        seed = self.getint("experiment", "seed")
        n = self.getint("problem", "n")
        suite = self.get("problem", "suite")
        if suite == "quadratic":
            d = self.getint("problem", "d")
            mu, L = self.getfloat("problem", "mu"), self.getfloat("problem", "L")
            rng = stream(seed, "suite")
            if self.parser.getboolean("problem", "heterogeneous"):
                Qs = [np.sort(rng.uniform(mu, L, size=d)) for _ in range(n)]
                return quadratic_suite(Qs, rng.standard_normal((n, d)))
            return synthetic_quadratic_suite(n, d, mu, L, self.getfloat("problem", "zeta"), rng)
        if suite == "absdev":
            centers = _floats(self.get("problem", "centers"))
            if centers.size != n:
                raise ConfigurationError(f"problem.centers has {centers.size} entries, expected n={n}")
            return absdev_suite(centers, self.getfloat("client", "sigma"))
        data_dir = self.get("problem", "data_dir") or os.environ.get("AREA_DATA_DIR")
        if data_dir is None:
            raise ConfigurationError("logreg needs problem.data_dir or $AREA_DATA_DIR")
        path = Path(data_dir)
        if not path.is_absolute() and not path.exists():
            path = self.base_dir / path
        train, test = _cached_mnist(str(path.resolve()))
        train = train.head(self.getint("problem", "train_samples"))
        part = dirichlet_partition(train.labels, self.getfloat("problem", "dirichlet_a"), n,
                                   stream(seed, "partition"))
        return logreg_problem(train, part, self.getfloat("problem", "ridge"), self.get("problem", "weighting"),
                              test=test, n_classes=10)

    def build_event_model(self, n: int):
        kind = self.get("scheduler", "events")
        if kind == "poisson":
            return PoissonRates(tuple(self.client_rates(n)), self.getfloat("scheduler", "rate_s"))
        if kind == "iid":
            p = self.get("scheduler", "p")
            p_s = float(self.get("scheduler", "p_s", "0"))
            probs = _floats(p) if p else np.full(n, (1.0 - p_s) / n)
            if probs.size == 1:
                probs = np.full(n, probs[0])
            return StationaryIID(tuple(probs), p_s)
        order = [SERVER if tok.strip() == "s" else int(tok) - 1
                 for tok in self.get("scheduler", "order", "").split(",") if tok.strip()]
        if not order:
            order = list(range(n)) + [SERVER]
        return DeterministicCycle(tuple(order), n)

    def client_rates(self, n: int) -> np.ndarray:
        """Client rates from a scalar, a list, or ``normal:MEAN:STD`` (clipped at 0.1)."""
        text = self.get("scheduler", "rates").strip()
        if text.startswith("normal:"):
            _, mean, std = text.split(":")
            draw = stream(self.getint("experiment", "seed"), "rates").normal(float(mean), float(std), n)
            return np.maximum(draw, 0.1)
        rates = _floats(text)
        if rates.size == 1:
            return np.full(n, rates[0])
        if rates.size != n:
            raise ConfigurationError(f"scheduler.rates has {rates.size} entries, expected n={n}")
        return rates

    def build_criterion(self):
        kind = self.get("scheduler", "criterion")
        if kind == "buffered":
            return protocol.Buffered(self.getint("scheduler", "delta"))
        if kind == "periodic":
            return protocol.Periodic(self.getfloat("scheduler", "period"))
        return protocol.PoissonServer()

    def build_schedule(self, problem, event_model, criterion):
        kind = self.get("schedule", "kind")
        M = self.getint("client", "M")
        if kind == "constant":
            return Constant(self.getfloat("schedule", "alpha"))
        if kind == "inverse_k":
            return InverseK(self.getfloat("schedule", "c0"))
        p, p_s = stationary_probabilities(event_model, criterion)
        c = problem.constants
        if kind == "theorem1":
            if not (c.mu > 0 and math.isfinite(c.lipschitz_L)):
                raise ConfigurationError("the strongly convex schedule needs finite mu > 0 and L")
            return TheoremOne.from_constants(c.mu, c.lipschitz_L, M, float(min(p.min(), p_s)))
        if c.x_star is None or not math.isfinite(c.lipschitz_B):
            raise ConfigurationError("the constant nonsmooth schedule needs a known minimizer and B")
        dist0_sq = float(np.sum((self.initial_model(problem) - c.x_star) ** 2))
        return ConstantTheoremTwo.from_constants(self.K, p_s, float(np.mean(1.0 / p)), c.sigma, c.lipschitz_B,
                                                 M, dist0_sq)

    def initial_model(self, problem) -> np.ndarray:
        x0 = _floats(self.get("problem", "x0"))
        if x0.size == 1:
            return np.full(problem.dim, x0[0])
        if x0.size != problem.dim:
            raise ConfigurationError(f"problem.x0 has {x0.size} entries, expected {problem.dim}")
        return x0

    def noise(self) -> NoiseModel:
        return NoiseModel(self.get("client", "noise"), self.getfloat("client", "sigma"),
                          self.getint("client", "batch_size"))

    def trial_setup(self, trial: int, problem=None) -> TrialSetup:
        problem = problem if problem is not None else self.build_problem()
        model = self.build_event_model(problem.n)
        crit = self.build_criterion()
        return TrialSetup(problem, method=self.method, schedule=self.build_schedule(problem, model, crit),
                          event_model=model, criterion=crit, M=self.getint("client", "M"), noise=self.noise(),
                          K=self.K, t_h=self.t_h, seed=trial_seed(self.getint("experiment", "seed"), trial),
                          x0=self.initial_model(problem), cadence=self.getint("experiment", "cadence"),
                          sample_count=self.getint("baseline", "sample_count"),
                          server_lr=self.getfloat("baseline", "server_lr"))


def _override_target(name: str):
    if name == "alpha":
        return "schedule", "alpha"
    if name == "seed":
        return "experiment", "seed"
    if "." not in name:
        raise ConfigurationError(f"override {name!r} must be written section.key")
    return tuple(name.split(".", 1))


_MNIST_CACHE: dict = {}


def _cached_mnist(directory: str):
    if directory not in _MNIST_CACHE:
        _MNIST_CACHE[directory] = load_mnist(directory)
    return _MNIST_CACHE[directory]


# -- running ------------------------------------------------------------------


@dataclass
class TrialSummary:
    trial: int
    metrics: MetricsSeries
    events: object
    diverged: bool
    loss: float
    accuracy: float


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    trials: list
    horizon: float
    rho: float

    @property
    def method(self) -> str:
        return self.config.method

    @property
    def alpha(self) -> Optional[float]:
        if self.config.get("schedule", "kind") == "constant":
            return self.config.getfloat("schedule", "alpha")
        return None

    @property
    def diverged(self) -> list:
        return [t.diverged for t in self.trials]

    def aggregate(self) -> dict:
        acc = np.array([t.accuracy for t in self.trials])
        loss = np.array([t.loss for t in self.trials])
        # a diverged trial scores zero accuracy and infinite loss
        acc = np.where(np.isnan(acc), 0.0, acc)
        return {"acc_mean": float(acc.mean()), "acc_min": float(acc.min()), "acc_max": float(acc.max()),
                "loss_mean": float(loss.mean()), "loss_min": float(loss.min()), "loss_max": float(loss.max())}

    def summary_row(self) -> dict:
        row = {"method": self.method, "alpha": "" if self.alpha is None else repr(self.alpha),
               "rho": repr(self.rho)}
        row.update({k: repr(v) for k, v in self.aggregate().items()})
        return row

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "wall_time", "k", "train_loss", "test_acc"])
        for t in self.trials:
            for wt, k, loss, acc in t.metrics.rows():
                w.writerow([t.trial, repr(wt), k, repr(loss), repr(acc)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"config": self.config.text, "config_version": CONFIG_VERSION, "method": self.method,
                "alpha": self.alpha, "horizon": self.horizon, "rho": _json_float(self.rho),
                "aggregate": {k: _json_float(v) for k, v in self.aggregate().items()},
                "trials": [{"trial": t.trial, "diverged": t.diverged, "loss": _json_float(t.loss),
                            "accuracy": _json_float(t.accuracy), "events": len(t.events)} for t in self.trials]}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        (out / "events").mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(self.config.text)
        (out / "metrics.csv").write_text(self.metrics_csv())
        _write_summary(out / "summary.csv", [self.summary_row()])
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        for t in self.trials:
            t.events.to_csv(out / "events" / f"trial_{t.trial:03d}.csv")


SUMMARY_COLUMNS = ["method", "alpha", "rho", "acc_mean", "acc_min", "acc_max", "loss_mean", "loss_min", "loss_max"]


def _write_summary(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _json_float(v):
    # JSON has no inf/nan; keep them readable
    if v is None or math.isfinite(v):
        return v
    return str(v)


def _run_one(args):
    text, base_dir, trial = args
    cfg = ExperimentConfig.from_string(text, base_dir)
    return trial, run_trial(cfg.trial_setup(trial, _problem_for(cfg)))


_PROBLEM_CACHE: dict = {}


def _problem_for(cfg: ExperimentConfig):
    # sweeps only change the schedule, so the problem is shared between them
    key = (str(cfg.base_dir), {s: dict(cfg.parser[s]) for s in ("experiment", "problem", "client", "scheduler")}
           .__repr__())
    if key not in _PROBLEM_CACHE:
        _PROBLEM_CACHE.clear()
        _PROBLEM_CACHE[key] = cfg.build_problem()
    return _PROBLEM_CACHE[key]


def _mean_curve(trials, horizon: float) -> MetricsSeries:
    times = sorted({t for tr in trials for t in tr.metrics.wall_time if t <= horizon})
    out = MetricsSeries()
    for t in times:
        vals = [value_at(tr.metrics, t) for tr in trials]
        acc = [a for _, a in vals]
        out.append(t, 0, float(np.mean([v for v, _ in vals])), float(np.mean(acc)))
    return out


def run_experiment(config: ExperimentConfig, out_dir=None, workers: int = 1) -> ExperimentReport:
    """Run every trial of ``config``; write outputs to ``out_dir`` if given.

    Final metrics are read at the last snapshot not after the horizon
    (``t_h``, or the latest end time when only ``K`` is set).  ``rho`` is
    computed on the trial-mean accuracy curve.
    """
    n_trials = config.getint("experiment", "trials")
    jobs = [(config.text, str(config.base_dir), t) for t in range(n_trials)]
    if workers > 1 and n_trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_run_one, jobs))
    else:
        problem = _problem_for(config)
        results = {t: run_trial(config.trial_setup(t, problem)) for t in range(n_trials)}
    horizon = config.t_h if config.t_h is not None else max(r.metrics.wall_time[-1] for r in results.values())
    trials = []
    for t in range(n_trials):
        r = results[t]
        loss, acc = value_at(r.metrics, horizon)
        if r.diverged:
            loss = math.inf
        trials.append(TrialSummary(t, r.metrics, r.events, r.diverged, loss, acc))
    target = config.getfloat("experiment", "target_accuracy")
    rho = compute_rho(_mean_curve(trials, horizon), horizon, target) if horizon > 0 else SENTINEL_GT1
    report = ExperimentReport(config, trials, horizon, rho)
    if out_dir is not None:
        report.write(out_dir)
    return report


# -- sweeps -------------------------------------------------------------------


def parse_grid(spec: str):
    """Parse ``name=a:b:logN``, ``name=a:b:linN`` or ``name=v1,v2,...``.

    >>> parse_grid("alpha=1e-2:1e4:log7")[1]
    [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0]
    """
    if "=" not in spec:
        raise ConfigurationError(f"grid {spec!r} must look like name=values")
    name, values = spec.split("=", 1)
    parts = values.split(":")
    if len(parts) == 3:
        lo, hi, how = float(parts[0]), float(parts[1]), parts[2]
        if how.startswith("log"):
            if lo <= 0 or hi <= 0:
                raise ConfigurationError("log grids need positive bounds")
            vals = np.logspace(math.log10(lo), math.log10(hi), int(how[3:]))
        elif how.startswith("lin"):
            vals = np.linspace(lo, hi, int(how[3:]))
        else:
            raise ConfigurationError(f"unknown grid spacing {how!r}")
        # snap to the shortest decimal so config text stays readable
        return name.strip(), [float(f"{v:.12g}") for v in vals]
    return name.strip(), [float(v) for v in values.split(",")]


def run_sweep(config: ExperimentConfig, grid: str, out_dir=None, workers: int = 1) -> list:
    """Run ``config`` once per grid value; returns the reports in grid order."""
    name, values = parse_grid(grid)
    reports = []
    for v in values:
        cfg = config.with_overrides(**{name: repr(v)})
        sub = None if out_dir is None else Path(out_dir) / f"{name}={v:g}"
        reports.append(run_experiment(cfg, sub, workers))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _write_summary(Path(out_dir) / "summary.csv", [r.summary_row() for r in reports])
    return reports


def report_constants(config: ExperimentConfig) -> dict:
    """Constants entering the step-size schedules for ``config``."""
    from .schedules import theorem1_D

    problem = _problem_for(config)
    model = config.build_event_model(problem.n)
    crit = config.build_criterion()
    p, p_s = stationary_probabilities(model, crit)
    c = problem.constants
    M = config.getint("client", "M")
    strongly = c.mu > 0 and math.isfinite(c.lipschitz_L)
    out = {
        "mu": c.mu,
        "L": c.lipschitz_L,
        "gamma": c.gamma if strongly else math.nan,
        "D": theorem1_D(c.mu, c.lipschitz_L, M) if strongly else math.nan,
        "p_min": float(min(p.min(), p_s)) if p_s > 0 else float(p.min()),
        "p_s": float(p_s),
        "q_bar": float(np.mean(1.0 / p)),
        "lambda_s_opt": optimal_lambda_s(model.rates) if isinstance(model, PoissonRates) else math.nan,
    }
    return out
