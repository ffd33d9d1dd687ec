"""Datasets, client partitions and problem suites.

A :class:`Problem` bundles the per-client objectives with the weights that
define the global loss and any known constants (minimizer, ``mu``, ``L``).
"""

from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import AbsoluteDeviation, ConfigurationError, MultinomialLogReg, ProblemConstants, Quadratic

__all__ = [
    "IngestionError",
    "Dataset",
    "Partition",
    "Problem",
    "load_idx",
    "write_idx",
    "load_mnist",
    "dirichlet_partition",
    "quadratic_suite",
    "synthetic_quadratic_suite",
    "absdev_suite",
    "logreg_problem",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IngestionError(ValueError):
    """A data file could not be parsed."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"

    @property
    def n_samples(self) -> int:
        return self.labels.size

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def head(self, count: int) -> "Dataset":
        return Dataset(self.features[:count], self.labels[:count], self.split)


def _read_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _parse_idx(raw: bytes, expected_magic: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise IngestionError(f"{what}: file too short for the magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IngestionError(f"{what}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IngestionError(f"{what}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IngestionError(f"{what}: truncated data, expected {size} bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(path_images, path_labels, split: str = "train") -> Dataset:
    """Read an IDX image/label pair (optionally gzipped).

    Pixels are scaled to ``[0, 1]`` and images flattened to rows.
    """
    images = _parse_idx(_read_bytes(path_images), IDX_IMAGES_MAGIC, "images")
    labels = _parse_idx(_read_bytes(path_labels), IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise IngestionError(f"count: {images.shape[0]} images but {labels.shape[0]} labels")
    if images.shape[0] == 0:
        raise IngestionError("count: no samples")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features=features, labels=labels.astype(np.int64), split=split)


def write_idx(path_images, path_labels, images, labels, compress: bool = False) -> None:
    """Inverse of :func:`load_idx` for ``uint8`` images of shape ``(N, rows, cols)``."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    opener = gzip.open if compress else open
    with opener(path_images, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC) + struct.pack(">3I", *images.shape))
        fh.write(images.tobytes())
    with opener(path_labels, "wb") as fh:
        fh.write(struct.pack(">I", IDX_LABELS_MAGIC) + struct.pack(">I", labels.size))
        fh.write(labels.tobytes())


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_mnist(directory=None):
    """Load ``(train, test)`` from the standard MNIST file names.

    ``directory`` defaults to ``$AREA_DATA_DIR``.
    """
    if directory is None:
        directory = os.environ.get("AREA_DATA_DIR")
        if directory is None:
            raise FileNotFoundError("no data directory given and AREA_DATA_DIR is not set")
    d = Path(directory)
    train = load_idx(_find(d, "train-images-idx3-ubyte"), _find(d, "train-labels-idx1-ubyte"), "train")
    test = load_idx(_find(d, "t10k-images-idx3-ubyte"), _find(d, "t10k-labels-idx1-ubyte"), "test")
    return train, test


@dataclass(frozen=True)
class Partition:
    assignment: np.ndarray  # client id of every sample

    @property
    def n_clients(self) -> int:
        return int(self.assignment.max()) + 1

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_clients)

    def client_ids(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == i)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "client_id"])
            for j, c in enumerate(self.assignment):
                w.writerow([j, int(c)])


def _largest_remainder(q: np.ndarray, total: int) -> np.ndarray:
    raw = q * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(labels, a: float, n: int, rng: np.random.Generator) -> Partition:
    """Split samples over ``n`` clients with per-class ``Dir(a)`` proportions.

    Class ``c``'s samples are shuffled and dealt out by largest-remainder
    rounding of ``N_c * q_c``.  Clients left empty then take one sample
    each from the currently largest client.
    """
    labels = np.asarray(labels)
    N = labels.size
    if not 1 <= n <= N:
        raise ConfigurationError(f"cannot split {N} samples over {n} clients")
    if not a > 0:
        raise ConfigurationError("Dirichlet concentration must be positive")
    assignment = np.empty(N, dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        q = rng.dirichlet(np.full(n, a))
        counts = _largest_remainder(q, idx.size)
        assignment[idx] = np.repeat(np.arange(n), counts)
    counts = np.bincount(assignment, minlength=n)
    for empty in np.flatnonzero(counts == 0):
        donor = int(np.argmax(counts))
        moved = np.flatnonzero(assignment == donor)[-1]
        assignment[moved] = empty
        counts[donor] -= 1
        counts[empty] += 1
    return Partition(assignment)


@dataclass
class Problem:
    """Per-client objectives plus the weights of the global loss."""

    objectives: list
    weights: np.ndarray
    constants: ProblemConstants
    test: Optional[Dataset] = None
    name: str = ""

    @property
    def n(self) -> int:
        return len(self.objectives)

    @property
    def dim(self) -> int:
        return self.objectives[0].dim

    def loss(self, x) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            return float(sum(w * f.value_grad(x)[0] for w, f in zip(self.weights, self.objectives)))

    def grad(self, x) -> np.ndarray:
        return sum(w * f.value_grad(x)[1] for w, f in zip(self.weights, self.objectives))

    def accuracy(self, x) -> float:
        if self.test is None:
            return float("nan")
        pred = self.objectives[0].predict(x, self.test.features)
        return float(np.mean(pred == self.test.labels))

    def optimal_value(self) -> float:
        if self.constants.x_star is None:
            return float("nan")
        return self.loss(self.constants.x_star)


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def quadratic_suite(Qs: Sequence, centers: Sequence, mu: Optional[float] = None, L: Optional[float] = None) -> Problem:
    """Build a uniformly weighted quadratic problem from explicit parts.

    ``mu`` and ``L`` default to the extreme eigenvalues over all clients.
    The global minimizer solves ``sum_i Q_i (x - c_i) = 0``.
    """
    objs = [Quadratic(Q, c) for Q, c in zip(Qs, centers)]
    if len(objs) == 0:
        raise ConfigurationError("need at least one client")
    d = objs[0].dim
    eig = np.concatenate([o.eigenvalues() for o in objs])
    mu = float(eig.min()) if mu is None else mu
    L = float(eig.max()) if L is None else L
    H = np.zeros((d, d))
    b = np.zeros(d)
    for o in objs:
        Qd = np.diag(o.Q) if o.Q.ndim == 1 else o.Q
        H += Qd
        b += Qd @ o.center
    x_star = objs[0].center.copy() if len(objs) == 1 else np.linalg.solve(H, b)
    u_stars = [o.center.copy() for o in objs]
    zeta = max(float(np.linalg.norm(x_star - u)) for u in u_stars)
    consts = ProblemConstants(mu=mu, lipschitz_L=L, zeta=zeta, x_star=x_star, u_stars=u_stars)
    return Problem(objs, _uniform(len(objs)), consts, name="quadratic")


def _random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    Z = rng.standard_normal((d, d))
    Qm, R = np.linalg.qr(Z)
    return Qm * np.sign(np.diag(R))


def synthetic_quadratic_suite(n: int, d: int, mu: float, L: float, zeta_target: float,
                              rng: np.random.Generator, rotate: bool = True) -> Problem:
    """Random non-IID quadratics with a shared spectrum in ``[mu, L]``.

    Every client Hessian has eigenvalues ``mu``, ``L`` and ``d - 2`` values
    drawn uniformly in between, rotated by a client-specific orthogonal
    matrix when ``rotate`` is set.  Centers are scaled so that the largest
    distance between a local and the global minimizer equals
    ``zeta_target`` (``zeta`` is 0 when ``n = 1``).
    """
    if not (L >= mu > 0):
        raise ConfigurationError("need L >= mu > 0")
    if d == 1:
        spectrum = np.array([mu])
    else:
        spectrum = np.sort(np.concatenate([[mu, L], rng.uniform(mu, L, size=d - 2)]))
    Qs = []
    for _ in range(n):
        if rotate and d > 1:
            R = _random_rotation(d, rng)
            Qs.append((R * spectrum) @ R.T)
        else:
            Qs.append(spectrum.copy())
    dirs = rng.standard_normal((n, d))
    offset = rng.standard_normal(d)
    base = quadratic_suite(Qs, dirs, mu, L)
    # with one client the measured zeta is pure round-off
    scale = zeta_target / base.constants.zeta if n > 1 and base.constants.zeta > 0 else 0.0
    return quadratic_suite(Qs, dirs * scale + offset, mu, L)


def absdev_suite(centers, sigma: float = 0.0) -> Problem:
    """One-dimensional ``f_i(x) = |x - c_i|`` (Lipschitz constant 1).

    ``x_star`` is set to the median of the centers.
    """
    centers = np.asarray(centers, dtype=np.float64).ravel()
    objs = [AbsoluteDeviation(np.array([c])) for c in centers]
    x_star = np.array([np.median(centers)])
    consts = ProblemConstants(mu=0.0, lipschitz_L=float("inf"), lipschitz_B=1.0, sigma=sigma, x_star=x_star,
                              u_stars=[np.array([c]) for c in centers])
    return Problem(objs, _uniform(centers.size), consts, name="absdev")


def logreg_problem(train: Dataset, partition: Partition, ridge: float, weighting: str = "sample",
                   test: Optional[Dataset] = None, n_classes: Optional[int] = None) -> Problem:
    """Federated softmax regression: client ``i`` owns ``partition.client_ids(i)``."""
    C = n_classes or train.n_classes
    objs = [MultinomialLogReg(train.features, train.labels, C, ridge, partition.client_ids(i))
            for i in range(partition.n_clients)]
    s = np.array([o.n_samples for o in objs], dtype=np.float64)
    if weighting == "sample":
        weights = s / s.sum()
    elif weighting == "uniform":
        weights = _uniform(len(objs))
    else:
        raise ConfigurationError(f"unknown weighting {weighting!r}")
    if np.any(s == 0):
        raise ConfigurationError("every client needs at least one sample")
    # softmax Hessian blocks are bounded by half the feature second moment
    L = max(ridge + 0.5 * np.linalg.norm(train.features[partition.client_ids(i)], 2) ** 2 / s[i]
            for i in range(len(objs)))
    consts = ProblemConstants(mu=ridge, lipschitz_L=float(L))
    return Problem(objs, weights, consts, test=test, name="logreg")
