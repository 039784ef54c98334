"""Experiment configuration, presets, trace emission, and reference caching.

A *job* is a flat dict describing one run: where the data comes from (a
dataset directory or generator parameters), the regularizer, the algorithm
and its hyper-parameters, and the seed.  ``execute_job`` turns a job into a
round trace plus the reference solution used for the optimality metric;
``run_job_to_files`` additionally writes the trace CSV and a JSON sidecar
with the fully resolved configuration and data checksums, which is enough to
replay the run bit for bit (wall-clock column aside).
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import algorithm, analysis, baselines, datagen
from .objective import Problem, SmoothSpec, average_gradient, constants
from .prox import L1, L2Ball, Regularizer, Zero, subgradient_bound

TRACE_COLUMNS = ("round", "algorithm", "seed", "optimality", "dist_sq", "drift_sq", "omega", "wall_ms")

# Experiment-scale defaults: 30 workers with 2000 samples each, strongly
# heterogeneous (alpha = beta = 10), l2 weight 0.01 and l1 weight 1e-4,
# tau = 5 local steps, unit local and global step sizes, stochastic batch 20.
FIG1 = {
    "alpha": 10.0,
    "beta": 10.0,
    "n": 30,
    "m": 2000,
    "l2_weight": 0.01,
    "l1_weight": 1e-4,
    "tau": 5,
    "eta": 1.0,
    "eta_g": 1.0,
    "stoch_batch": 20,
}
# Step-size sweep: fix batch 50, eta_g = 1, tau = 10, vary eta.
FIG2_ETA = {"batch": 50, "eta_g": 1.0, "tau": 10, "etas": (0.02, 0.2, 1.0)}
# Local-steps sweep: fix batch 50, eta_g = 1, eta = 0.2, vary tau.
FIG2_TAU = {"batch": 50, "eta_g": 1.0, "eta": 0.2, "taus": (2, 5, 10)}

# The experiment dimensionality is a free parameter of the synthetic
# generator; 20 keeps full reproduction runs at desk scale.
DEFAULT_DIM = 20
DEFAULT_ROUNDS = 500
DEFAULT_SEEDS = (0, 1, 2)

_JOB_DEFAULTS = {
    "label": None,
    "algorithm": "proposed",
    "engine": "worker",
    "rounds": DEFAULT_ROUNDS,
    "tau": 5,
    "eta": 1.0,
    "eta_g": 1.0,
    "grad": "full",
    "batch": None,
    "seed": 0,
    "ref_tol": 1e-13,
}

_DATA_DEFAULTS = {
    "dir": None,
    "alpha": 10.0,
    "beta": 10.0,
    "n": 30,
    "m": 2000,
    "d": DEFAULT_DIM,
    "seed": None,
}

_REG_DEFAULTS = {
    "kind": "l1",
    "l1_weight": 1e-4,
    "l2_weight": 0.01,
    "ball_radius": 1.0,
    "ball_center": 0.0,
}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def load_config(path: str | Path) -> dict:
    """Read a TOML (or JSON) config file into a raw dict."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        with open(path) as fh:
            raw = json.load(fh)
        # A sidecar written by run_job_to_files can be replayed directly.
        if "job" in raw and isinstance(raw["job"], dict):
            return raw["job"]
        return raw
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def resolve_job(raw: dict | None = None, **overrides) -> dict:
    """Fill defaults and validate; returns the canonical job dict."""
    raw = copy.deepcopy(raw) if raw else {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("data", "regularizer"):
            raw.setdefault(key, {}).update({k: v for k, v in value.items() if v is not None})
        else:
            raw[key] = value

    job = dict(_JOB_DEFAULTS)
    data = dict(_DATA_DEFAULTS)
    reg = dict(_REG_DEFAULTS)
    data.update(raw.pop("data", {}))
    reg.update(raw.pop("regularizer", {}))
    unknown = set(raw) - set(_JOB_DEFAULTS) - {"sweep", "seeds"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    job.update({k: raw[k] for k in raw if k in _JOB_DEFAULTS})
    job["data"] = data
    job["regularizer"] = reg

    if job["algorithm"] not in ("proposed",) + tuple(baselines.BASELINES):
        raise ConfigError(f"unknown algorithm: {job['algorithm']}")
    if job["engine"] not in ("worker", "vectorized"):
        raise ConfigError(f"unknown engine: {job['engine']}")
    if job["grad"] not in ("full", "stoch"):
        raise ConfigError(f"grad must be 'full' or 'stoch', got {job['grad']}")
    if job["grad"] == "stoch" and job["batch"] is None:
        raise ConfigError("stochastic mode needs a batch size")
    if job["grad"] == "full":
        job["batch"] = None
    if reg["kind"] not in ("l1", "zero", "l2_ball"):
        raise ConfigError(f"unknown regularizer kind: {reg['kind']}")
    if data["seed"] is None:
        data["seed"] = job["seed"]
    if job["label"] is None:
        job["label"] = f"{job['algorithm']}_seed{job['seed']}"
    return job


def build_regularizer(job: dict, dim: int) -> Regularizer:
    reg = job["regularizer"]
    if reg["kind"] == "zero":
        return Zero()
    if reg["kind"] == "l1":
        return L1(weight=reg["l1_weight"])
    if reg["kind"] == "l2_ball":
        center = np.full(dim, float(reg["ball_center"]))
        return L2Ball(radius=float(reg["ball_radius"]), center=center)
    raise ConfigError(f"unknown regularizer kind: {reg['kind']}")


def _array_checksum(*arrays: np.ndarray) -> str:
    digest = hashlib.sha256()
    for arr in arrays:
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()


def build_problem(job: dict) -> tuple[Problem, dict]:
    """Load or generate the datasets named by the job; returns data info."""
    data = job["data"]
    smooth = SmoothSpec(l2_weight=job["regularizer"]["l2_weight"])
    if data["dir"]:
        workers, manifest = datagen.load_dataset_dir(data["dir"])
        info = {"dir": str(data["dir"]), "sha256": manifest["sha256"], "spec": manifest.get("spec")}
    else:
        spec = datagen.GenSpec(
            alpha=float(data["alpha"]),
            beta=float(data["beta"]),
            n=int(data["n"]),
            m=int(data["m"]),
            d=int(data["d"]),
            seed=int(data["seed"]),
        )
        workers = datagen.generate(spec)
        info = {
            "genspec": asdict(spec),
            "sha256": {
                f"worker_{i:03d}": _array_checksum(ds.features, ds.labels)
                for i, ds in enumerate(workers)
            },
        }
    return Problem(workers=tuple(workers), smooth=smooth), info


class ReferenceCache:
    """Memoizes reference solutions, optionally persisted to a directory."""

    def __init__(self, cache_dir: str | Path | None = None):
        self._memory: dict[str, analysis.ReferenceSolution] = {}
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(data_info: dict, job: dict) -> str:
        reg = job["regularizer"]
        payload = json.dumps(
            {"data": data_info.get("sha256"), "reg": reg, "tol": job["ref_tol"]},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def get(self, key: str) -> analysis.ReferenceSolution | None:
        if key in self._memory:
            return self._memory[key]
        if self.cache_dir:
            path = self.cache_dir / f"{key}.json"
            if path.is_file():
                with open(path) as fh:
                    blob = json.load(fh)
                ref = analysis.ReferenceSolution(
                    x_star=np.array(blob["x_star"]),
                    fixed_point_residual=blob["fixed_point_residual"],
                    iterations=blob["iterations"],
                )
                self._memory[key] = ref
                return ref
        return None

    def put(self, key: str, ref: analysis.ReferenceSolution) -> None:
        self._memory[key] = ref
        if self.cache_dir:
            blob = {
                "x_star": ref.x_star.tolist(),
                "fixed_point_residual": ref.fixed_point_residual,
                "iterations": ref.iterations,
            }
            with open(self.cache_dir / f"{key}.json", "w") as fh:
                json.dump(blob, fh)


def reference_for(
    job: dict, problem: Problem, g: Regularizer, data_info: dict, cache: ReferenceCache | None
) -> analysis.ReferenceSolution:
    key = ReferenceCache.key(data_info, job)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    ref = analysis.solve_reference(problem, g, tol=job["ref_tol"])
    if cache is not None:
        cache.put(key, ref)
    return ref


@dataclass
class JobResult:
    job: dict
    trace: algorithm.RoundTrace
    reference: analysis.ReferenceSolution
    problem: Problem
    g: Regularizer
    hyper: algorithm.HyperParams
    data_info: dict


def execute_job(
    job: dict, cache: ReferenceCache | None = None, threads: int | None = None
) -> JobResult:
    """Build data, solve the reference, and run the configured algorithm."""
    job = resolve_job(job)
    problem, data_info = build_problem(job)
    g = build_regularizer(job, problem.dim)
    hyper = algorithm.HyperParams(
        rounds=int(job["rounds"]),
        tau=int(job["tau"]),
        eta=float(job["eta"]),
        eta_g=float(job["eta_g"]),
        batch=None if job["batch"] is None else int(job["batch"]),
        seed=int(job["seed"]),
    )
    ref = reference_for(job, problem, g, data_info, cache)
    name = job["algorithm"]
    if name == "proposed":
        engine = algorithm.run_vectorized if job["engine"] == "vectorized" else algorithm.run
        if engine is algorithm.run:
            trace = engine(problem, hyper, g, threads=threads)
        else:
            trace = engine(problem, hyper, g)
    else:
        trace = baselines.BASELINES[name](problem, hyper, g)
    return JobResult(
        job=job, trace=trace, reference=ref, problem=problem, g=g, hyper=hyper, data_info=data_info
    )


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def trace_rows(result: JobResult) -> list[dict]:
    """Per-round metric rows (round r = 1 is the initial state)."""
    trace = result.trace
    x_star = result.reference.x_star
    norm_star = float(np.linalg.norm(x_star))
    if norm_star == 0.0:
        raise ValueError("optimality metric undefined for x* = 0")
    records = None
    if trace.grad_sums is not None:
        records = analysis.lyapunov_series(trace, result.problem, result.hyper, x_star)
    rows = []
    for k in range(trace.rounds + 1):
        diff = trace.x_bar_prox[k] - x_star
        dist_sq = float(diff @ diff)
        rows.append(
            {
                "round": k + 1,
                "algorithm": trace.algorithm,
                "seed": trace.seed,
                "optimality": math.sqrt(dist_sq) / norm_star,
                "dist_sq": dist_sq,
                "drift_sq": records[k].drift_sq if records else math.nan,
                "omega": records[k].omega if records else math.nan,
                "wall_ms": float(trace.wall_ms[k]),
            }
        )
    return rows


def emit_trace(result: JobResult, csv_path: str | Path, sidecar: bool = True) -> tuple[Path, Path | None]:
    """Write the trace CSV (17 significant digits) and its JSON sidecar."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    rows = trace_rows(result)
    with open(csv_path, "w") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for row in rows:
            fh.write(
                f"{row['round']},{row['algorithm']},{row['seed']},"
                f"{_fmt(row['optimality'])},{_fmt(row['dist_sq'])},{_fmt(row['drift_sq'])},"
                f"{_fmt(row['omega'])},{_fmt(row['wall_ms'])}\n"
            )
    sidecar_path = None
    if sidecar:
        mu, L = constants(result.problem.workers, result.problem.smooth)
        sigma_sq = None
        if result.hyper.batch is not None:
            sigma_sq = analysis.estimate_sigma_sq(
                result.problem, result.reference.x_star, result.hyper.batch, seed=result.hyper.seed
            )
        blob = {
            "job": result.job,
            "data": result.data_info,
            "reference": {
                "fixed_point_residual": result.reference.fixed_point_residual,
                "iterations": result.reference.iterations,
                "norm": float(np.linalg.norm(result.reference.x_star)),
            },
            "constants": {"mu": mu, "L": L, "n": result.problem.n, "dim": result.problem.dim},
            "sigma_sq_estimate": sigma_sq,
            "subgradient_bound": subgradient_bound(result.g, result.problem.dim),
            "grad_norm_at_star": float(
                np.linalg.norm(average_gradient(result.reference.x_star, result.problem))
            ),
            "columns": list(TRACE_COLUMNS),
            "round_indexing": "round r is the state after r-1 aggregations; r=1 is initial",
        }
        sidecar_path = csv_path.with_suffix(".json")
        with open(sidecar_path, "w") as fh:
            json.dump(json_sanitize(blob), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return csv_path, sidecar_path


def json_sanitize(obj):
    """Recursively make a structure strict-JSON safe (inf/nan to strings)."""
    if isinstance(obj, dict):
        return {k: json_sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, np.ndarray):
        return json_sanitize(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def run_job_to_files(
    job: dict, out_dir: str | Path, cache: ReferenceCache | None = None, threads: int | None = None
) -> tuple[Path, Path]:
    result = execute_job(job, cache=cache, threads=threads)
    out_dir = Path(out_dir)
    csv_path, sidecar_path = emit_trace(result, out_dir / f"{result.job['label']}.csv")
    return csv_path, sidecar_path


def replay(sidecar_path: str | Path, out_csv: str | Path, cache: ReferenceCache | None = None) -> Path:
    """Re-run the job recorded in a sidecar; the CSV is bit-identical except
    for the wall_ms column."""
    with open(sidecar_path) as fh:
        blob = json.load(fh)
    result = execute_job(blob["job"], cache=cache)
    csv_path, _ = emit_trace(result, out_csv, sidecar=False)
    return csv_path


def preset_jobs(
    name: str,
    grad: str = "full",
    sweep: str | None = None,
    rounds: int | None = None,
    seeds: tuple[int, ...] | None = None,
    d: int | None = None,
    algorithms: tuple[str, ...] | None = None,
) -> list[dict]:
    """Resolved job lists for the two experiment presets.

    ``fig1`` compares the proposed algorithm against all baselines at the
    heterogeneous configuration, with full or batch-20 stochastic gradients.
    ``fig2`` sweeps eta (with tau=10, batch 50) or tau (with eta=0.2,
    batch 50) for the proposed algorithm only.
    """
    seeds = tuple(seeds) if seeds is not None else DEFAULT_SEEDS
    rounds = rounds if rounds is not None else DEFAULT_ROUNDS
    d = d if d is not None else DEFAULT_DIM
    base_data = {
        "alpha": FIG1["alpha"],
        "beta": FIG1["beta"],
        "n": FIG1["n"],
        "m": FIG1["m"],
        "d": d,
    }
    base_reg = {"kind": "l1", "l1_weight": FIG1["l1_weight"], "l2_weight": FIG1["l2_weight"]}
    jobs = []
    if name == "fig1":
        if grad not in ("full", "stoch"):
            raise ConfigError(f"grad must be 'full' or 'stoch', got {grad}")
        algos = algorithms or ("proposed",) + tuple(baselines.BASELINES)
        for seed in seeds:
            for algo in algos:
                jobs.append(
                    resolve_job(
                        {
                            "label": f"fig1_{grad}_{algo}_seed{seed}",
                            "algorithm": algo,
                            "rounds": rounds,
                            "tau": FIG1["tau"],
                            "eta": FIG1["eta"],
                            "eta_g": FIG1["eta_g"],
                            "grad": grad,
                            "batch": FIG1["stoch_batch"] if grad == "stoch" else None,
                            "seed": seed,
                            "data": dict(base_data, seed=seed),
                            "regularizer": dict(base_reg),
                        }
                    )
                )
        return jobs
    if name == "fig2":
        if sweep not in ("eta", "tau"):
            raise ConfigError("fig2 needs --sweep eta or --sweep tau")
        if sweep == "eta":
            for seed in seeds:
                for eta in FIG2_ETA["etas"]:
                    jobs.append(
                        resolve_job(
                            {
                                "label": f"fig2_eta{eta_val_label(eta)}_seed{seed}",
                                "algorithm": "proposed",
                                "rounds": rounds,
                                "tau": FIG2_ETA["tau"],
                                "eta": eta,
                                "eta_g": FIG2_ETA["eta_g"],
                                "grad": "stoch",
                                "batch": FIG2_ETA["batch"],
                                "seed": seed,
                                "data": dict(base_data, seed=seed),
                                "regularizer": dict(base_reg),
                            }
                        )
                    )
        else:
            for seed in seeds:
                for tau in FIG2_TAU["taus"]:
                    jobs.append(
                        resolve_job(
                            {
                                "label": f"fig2_tau{tau}_seed{seed}",
                                "algorithm": "proposed",
                                "rounds": rounds,
                                "tau": tau,
                                "eta": FIG2_TAU["eta"],
                                "eta_g": FIG2_TAU["eta_g"],
                                "grad": "stoch",
                                "batch": FIG2_TAU["batch"],
                                "seed": seed,
                                "data": dict(base_data, seed=seed),
                                "regularizer": dict(base_reg),
                            }
                        )
                    )
        return jobs
    raise ConfigError(f"unknown preset: {name}")


def eta_val_label(eta: float) -> str:
    return format(eta, "g").replace(".", "p")


def run_jobs(
    jobs: list[dict], out_dir: str | Path, cache: ReferenceCache | None = None
) -> list[tuple[Path, Path]]:
    """Run a list of jobs, thread-parallel across jobs when allowed."""
    out_dir = Path(out_dir)
    threads = algorithm.thread_count()
    if cache is None:
        cache = ReferenceCache(out_dir / "refs")
    # Solve references sequentially first: several jobs usually share one.
    for job in jobs:
        resolved = resolve_job(job)
        problem, data_info = build_problem(resolved)
        g = build_regularizer(resolved, problem.dim)
        reference_for(resolved, problem, g, data_info, cache)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda j: run_job_to_files(j, out_dir, cache, threads=1), jobs))
    return [run_job_to_files(job, out_dir, cache, threads=1) for job in jobs]
