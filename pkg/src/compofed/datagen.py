"""Synthetic heterogeneous worker data.

Hierarchical Gaussian scheme with two heterogeneity knobs: per worker i we
draw scalars u_i ~ N(0, alpha) and B_i ~ N(0, beta) (alpha, beta are
variances), then a local true model w_i ~ N(u_i * 1, I_d) and a feature
center v_i ~ N(B_i * 1, I_d).  Raw features follow a_il ~ N(v_i, Sigma) with
Sigma = diag(j^-1.2) and are then normalized to unit norm, the usual
logistic-regression preprocessing; without it the smoothness constant grows
like d*beta and unit step sizes diverge.  Binary labels are sampled from the
logistic model on the stored features, b_il = +1 with probability
sigmoid(a_il^T w_i), else -1.  Larger alpha/beta push the workers' label
rules and feature clouds further apart.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .objective import SmoothSpec, WorkerDataset, full_gradient, load_worker_csv, save_worker_csv
from .streams import datagen_stream

COV_DECAY_EXPONENT = 1.2
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class GenSpec:
    alpha: float
    beta: float
    n: int
    m: int
    d: int
    seed: int

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if min(self.n, self.m, self.d) < 1:
            raise ValueError("n, m, d must all be >= 1")


def generate_detailed(spec: GenSpec) -> tuple[list[WorkerDataset], dict]:
    """Generate datasets plus the latent per-worker draws (for diagnostics)."""
    cov_std = np.arange(1, spec.d + 1, dtype=np.float64) ** (-COV_DECAY_EXPONENT / 2.0)
    datasets = []
    u_all = np.empty(spec.n)
    b_all = np.empty(spec.n)
    w_all = np.empty((spec.n, spec.d))
    v_all = np.empty((spec.n, spec.d))
    for i in range(spec.n):
        rng = datagen_stream(spec.seed, i)
        u_i = rng.normal(0.0, math.sqrt(spec.alpha))
        b_i = rng.normal(0.0, math.sqrt(spec.beta))
        w_i = rng.normal(u_i, 1.0, size=spec.d)
        v_i = rng.normal(b_i, 1.0, size=spec.d)
        feats = rng.normal(0.0, 1.0, size=(spec.m, spec.d)) * cov_std + v_i
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        feats /= np.where(norms > 0, norms, 1.0)
        labels = np.where(rng.random(spec.m) < expit(feats @ w_i), 1.0, -1.0)
        datasets.append(WorkerDataset(features=feats, labels=labels, worker_id=i))
        u_all[i], b_all[i] = u_i, b_i
        w_all[i], v_all[i] = w_i, v_i
    latents = {"u": u_all, "B": b_all, "w": w_all, "v": v_all}
    return datasets, latents


def generate(spec: GenSpec) -> list[WorkerDataset]:
    """Deterministic datasets for ``spec`` (same spec, bitwise-same data)."""
    return generate_detailed(spec)[0]


def heterogeneity_report(datasets: list[WorkerDataset]) -> dict:
    """Per-worker feature-mean norms and gradient-at-zero divergences.

    The divergence of worker i is ||grad f_i(0) - grad f(0)|| computed on the
    data term only (the l2 term vanishes at zero), which measures how far the
    workers' pull directions disagree before any optimization happens.
    """
    if not datasets:
        raise ValueError("need at least one dataset")
    spec = SmoothSpec(0.0)
    zero = np.zeros(datasets[0].dim)
    grads = np.stack([full_gradient(zero, ds, spec) for ds in datasets])
    mean_grad = grads.mean(axis=0)
    divergences = np.linalg.norm(grads - mean_grad, axis=1)
    feature_mean_norms = np.array(
        [float(np.linalg.norm(ds.features.mean(axis=0))) for ds in datasets]
    )
    return {
        "feature_mean_norms": feature_mean_norms,
        "grad_divergences": divergences,
        "mean_divergence": float(divergences.mean()),
    }


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_dataset_dir(datasets: list[WorkerDataset], out_dir: str | Path, spec: GenSpec | None = None) -> Path:
    """Write per-worker CSVs plus a manifest (spec, file list, checksums)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, ds in enumerate(datasets):
        name = f"worker_{i:03d}.csv"
        save_worker_csv(ds, out_dir / name)
        files.append(name)
    manifest = {
        "spec": asdict(spec) if spec is not None else None,
        "files": files,
        "sha256": {name: _sha256(out_dir / name) for name in files},
    }
    manifest_path = out_dir / MANIFEST_NAME
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_dataset_dir(path: str | Path) -> tuple[list[WorkerDataset], dict]:
    """Load a dataset directory written by :func:`write_dataset_dir`."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {path}")
    manifest_path = path / MANIFEST_NAME
    if manifest_path.is_file():
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        files = manifest["files"]
    else:
        files = sorted(p.name for p in path.glob("worker_*.csv"))
        manifest = {"spec": None, "files": files, "sha256": {f: _sha256(path / f) for f in files}}
    if not files:
        raise ValueError(f"no worker files in {path}")
    datasets = [load_worker_csv(path / name, worker_id=i) for i, name in enumerate(files)]
    return datasets, manifest
