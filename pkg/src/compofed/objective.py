"""Per-worker smooth losses: l2-regularized binary logistic regression.

Each worker i holds m feature/label pairs and contributes

    f_i(x) = (1/m) * sum_l ln(1 + exp(-b_l * a_l^T x)) + (l2_weight/2) * ||x||^2.

The quadratic term lives inside every f_i so that each local loss is
mu-strongly convex with mu = l2_weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class SmoothSpec:
    """Smooth-part parameters; l2_weight must be > 0 for strong convexity."""

    l2_weight: float

    def __post_init__(self):
        if not (np.isfinite(self.l2_weight) and self.l2_weight >= 0):
            raise ValueError(f"l2 weight must be finite and nonnegative, got {self.l2_weight}")


@dataclass(frozen=True, eq=False)
class WorkerDataset:
    """One worker's feature matrix (m x d) and +/-1 labels (m,)."""

    features: np.ndarray
    labels: np.ndarray
    worker_id: int = 0

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError("features must be a nonempty (m, d) matrix")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must be a vector with one entry per sample")
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, eq=False)
class Problem:
    """A collection of workers plus the shared smooth-part parameters."""

    workers: tuple
    smooth: SmoothSpec

    def __post_init__(self):
        workers = tuple(self.workers)
        if not workers:
            raise ValueError("problem needs at least one worker")
        dims = {ds.dim for ds in workers}
        if len(dims) != 1:
            raise ValueError(f"workers disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "workers", workers)

    @property
    def n(self) -> int:
        return len(self.workers)

    @property
    def dim(self) -> int:
        return self.workers[0].dim


def _margins(x: np.ndarray, ds: WorkerDataset) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (ds.dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({ds.dim},)")
    return ds.features @ x


def loss(x: np.ndarray, ds: WorkerDataset, spec: SmoothSpec) -> float:
    """Mean logistic loss plus the l2 term, in overflow-safe form."""
    t = ds.labels * _margins(x, ds)
    # ln(1 + e^{-t}) == logaddexp(0, -t), stable for both signs of t.
    data_term = float(np.mean(np.logaddexp(0.0, -t)))
    return data_term + 0.5 * spec.l2_weight * float(np.asarray(x) @ np.asarray(x))


def full_gradient(x: np.ndarray, ds: WorkerDataset, spec: SmoothSpec) -> np.ndarray:
    t = ds.labels * _margins(x, ds)
    coef = -ds.labels * expit(-t)
    return ds.features.T @ coef / ds.m + spec.l2_weight * np.asarray(x, dtype=np.float64)


def minibatch_gradient(
    x: np.ndarray, ds: WorkerDataset, spec: SmoothSpec, batch: np.ndarray
) -> np.ndarray:
    """Mean of per-sample gradients over ``batch`` plus the l2 term."""
    batch = np.asarray(batch)
    if batch.ndim != 1 or batch.size == 0:
        raise ValueError("batch must be a nonempty index vector")
    if not np.issubdtype(batch.dtype, np.integer):
        raise ValueError("batch indices must be integers")
    if batch.min() < 0 or batch.max() >= ds.m:
        raise ValueError(f"batch indices out of range [0, {ds.m})")
    feats = ds.features[batch]
    labels = ds.labels[batch]
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (ds.dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({ds.dim},)")
    t = labels * (feats @ x)
    coef = -labels * expit(-t)
    return feats.T @ coef / batch.size + spec.l2_weight * x


def sample_batch(rng: np.random.Generator, m: int, b: int) -> np.ndarray:
    """Uniform size-b subset of {0..m-1}, without replacement, ascending.

    ``b == m`` returns the full index range without consuming the stream, so
    full-gradient runs need no randomness at all.
    """
    if not (1 <= b <= m):
        raise ValueError(f"batch size must satisfy 1 <= b <= {m}, got {b}")
    if b == m:
        return np.arange(m)
    return np.sort(rng.choice(m, size=b, replace=False))


def _lambda_max(features: np.ndarray, rel_tol: float = 1e-9, max_iter: int = 100_000) -> float:
    """Largest eigenvalue of A^T A by power iteration with Rayleigh quotients."""
    d = features.shape[1]
    # Deterministic start with a tilt so it is never orthogonal to the top
    # eigenvector of a structured matrix.
    v = np.ones(d) + np.linspace(0.0, 0.5, d)
    v /= np.linalg.norm(v)
    lam_prev = 0.0
    lam = 0.0
    for _ in range(max_iter):
        w = features.T @ (features @ v)
        lam = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(lam - lam_prev) <= rel_tol * max(abs(lam), 1e-30):
            break
        lam_prev = lam
    return lam


def constants(datasets: Sequence[WorkerDataset], spec: SmoothSpec) -> tuple[float, float]:
    """(mu, L): strong convexity and smoothness constants of the f_i.

    mu = l2_weight.  L adds the worst per-worker logistic curvature bound
    lambda_max(A_i^T A_i) / (4 m_i), since the logistic second derivative is
    at most 1/4.
    """
    datasets = list(datasets)
    if not datasets:
        raise ValueError("need at least one dataset")
    worst = max(_lambda_max(ds.features) / (4.0 * ds.m) for ds in datasets)
    return spec.l2_weight, spec.l2_weight + worst


def average_loss(x: np.ndarray, problem: Problem) -> float:
    """f(x) = (1/n) sum_i f_i(x)."""
    total = 0.0
    for ds in problem.workers:
        total += loss(x, ds, problem.smooth)
    return total / problem.n


def average_gradient(x: np.ndarray, problem: Problem) -> np.ndarray:
    """grad f(x), accumulated in ascending worker order."""
    acc = np.zeros(problem.dim)
    for ds in problem.workers:
        acc += full_gradient(x, ds, problem.smooth)
    return acc / problem.n


def save_worker_csv(ds: WorkerDataset, path: str | Path) -> Path:
    """Write one worker file: header f0..f{d-1},label then one row per sample."""
    path = Path(path)
    header = ",".join([f"f{j}" for j in range(ds.dim)] + ["label"])
    data = np.column_stack([ds.features, ds.labels])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
    return path


def load_worker_csv(path: str | Path, worker_id: int = 0) -> WorkerDataset:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip()
    cols = header.split(",")
    if not cols or cols[-1] != "label" or not all(c == f"f{j}" for j, c in enumerate(cols[:-1])):
        raise ValueError(f"{path}: expected header f0..f{{d-1}},label, got {header!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(cols):
        raise ValueError(f"{path}: row width {data.shape[1]} does not match header")
    return WorkerDataset(features=data[:, :-1], labels=data[:, -1], worker_id=worker_id)
