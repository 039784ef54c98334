"""Command-line entry points.

Subcommands:

* ``datagen``   write a directory of synthetic per-worker CSVs plus manifest
* ``run``       run one algorithm configuration, emit trace CSV + sidecar
* ``sweep``     run the grid described by a config file's [sweep] lists
* ``solve-ref`` compute and cache the reference solution for a dataset
* ``analyze``   contraction report (JSON) from an emitted trace
* ``preset``    the two built-in experiment reproductions (fig1 / fig2)

All runs are deterministic given their config and seed; COMPOFED_THREADS
caps thread-level parallelism without changing any output.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, harness
from .datagen import GenSpec, generate, write_dataset_dir


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="TOML (or JSON sidecar) config file")
    p.add_argument("--data", type=str, default=None, help="dataset directory (overrides config)")
    p.add_argument(
        "--algo", choices=["proposed", "fedmid", "fedda", "fastfedda"], default=None
    )
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--eta-g", dest="eta_g", type=float, default=None)
    p.add_argument("--grad", choices=["full", "stoch"], default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--engine", choices=["worker", "vectorized"], default=None)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compofed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate synthetic worker datasets")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--m", type=int, default=2000)
    p.add_argument("--d", type=int, default=harness.DEFAULT_DIM)
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("run", help="run a single configuration")
    _add_run_flags(p)

    p = sub.add_parser("sweep", help="run the sweep grid from a config file")
    p.add_argument("--config", type=str, required=True)
    p.add_argument("--out", type=str, default=None)

    p = sub.add_parser("solve-ref", help="compute and cache the reference solution")
    p.add_argument("--data", type=str, required=True, help="dataset directory")
    p.add_argument("--l1", type=float, default=1e-4, help="l1 weight")
    p.add_argument("--l2", type=float, default=0.01, help="l2 weight")
    p.add_argument("--tol", type=float, default=1e-13)
    p.add_argument("--out", type=str, required=True, help="cache directory")

    p = sub.add_parser("analyze", help="write a contraction report for a trace")
    p.add_argument("--trace", type=str, required=True, help="trace CSV (sidecar JSON alongside)")
    p.add_argument("--out", type=str, default=None, help="report path (default: <trace>.report.json)")

    p = sub.add_parser("preset", help="built-in experiment reproductions")
    p.add_argument("name", choices=["fig1", "fig2"])
    p.add_argument("--grad", choices=["full", "stoch"], default="full")
    p.add_argument("--sweep", choices=["eta", "tau"], default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--seeds", type=str, default=None, help="comma-separated, default 0,1,2")
    p.add_argument("--d", type=int, default=None, help="feature dimension")
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--dry-run", action="store_true", help="print resolved jobs, do not run")
    return parser


def _fail(message: str, code: int = 1) -> int:
    print(f"compofed: error: {message}", file=sys.stderr)
    return code


def _cmd_datagen(args) -> int:
    spec = GenSpec(alpha=args.alpha, beta=args.beta, n=args.n, m=args.m, d=args.d, seed=args.seed)
    manifest = write_dataset_dir(generate(spec), args.out, spec=spec)
    print(f"wrote {args.n} worker files and {manifest}")
    return 0


def _cmd_run(args) -> int:
    raw = harness.load_config(args.config) if args.config else {}
    job = harness.resolve_job(
        raw,
        data={"dir": args.data},
        algorithm=args.algo,
        rounds=args.rounds,
        tau=args.tau,
        eta=args.eta,
        eta_g=args.eta_g,
        grad=args.grad,
        batch=args.batch,
        seed=args.seed,
        engine=args.engine,
    )
    out_dir = Path(args.out or "runs")
    cache = harness.ReferenceCache(out_dir / "refs")
    csv_path, sidecar_path = harness.run_job_to_files(job, out_dir, cache=cache)
    print(f"wrote {csv_path} and {sidecar_path}")
    return 0


def _cmd_sweep(args) -> int:
    raw = harness.load_config(args.config)
    sweep = raw.pop("sweep", {})
    seeds = raw.pop("seeds", [raw.get("seed", 0)])
    etas = sweep.get("eta", [raw.get("eta", harness._JOB_DEFAULTS["eta"])])
    taus = sweep.get("tau", [raw.get("tau", harness._JOB_DEFAULTS["tau"])])
    batches = sweep.get("batch", [raw.get("batch")])
    if not (seeds and etas and taus and batches):
        raise harness.ConfigError("sweep lists must be nonempty")
    jobs = []
    for seed in seeds:
        for eta in etas:
            for tau in taus:
                for batch in batches:
                    job = dict(raw)
                    job.update(eta=eta, tau=tau, seed=seed)
                    if batch is not None:
                        job.update(batch=batch, grad="stoch")
                    job["label"] = (
                        f"{job.get('algorithm', 'proposed')}_eta{harness.eta_val_label(eta)}"
                        f"_tau{tau}_b{batch if batch is not None else 'full'}_seed{seed}"
                    )
                    jobs.append(harness.resolve_job(job))
    out_dir = Path(args.out or "runs")
    paths = harness.run_jobs(jobs, out_dir)
    print(f"wrote {len(paths)} traces under {out_dir}")
    return 0


def _cmd_solve_ref(args) -> int:
    job = harness.resolve_job(
        {
            "data": {"dir": args.data},
            "regularizer": {"kind": "l1", "l1_weight": args.l1, "l2_weight": args.l2},
            "ref_tol": args.tol,
        }
    )
    problem, data_info = harness.build_problem(job)
    g = harness.build_regularizer(job, problem.dim)
    cache = harness.ReferenceCache(args.out)
    ref = harness.reference_for(job, problem, g, data_info, cache)
    key = harness.ReferenceCache.key(data_info, job)
    print(
        f"reference cached under {Path(args.out) / (key + '.json')} "
        f"(residual {ref.fixed_point_residual:.3e}, {ref.iterations} iterations)"
    )
    return 0


def _cmd_analyze(args) -> int:
    trace_path = Path(args.trace)
    if not trace_path.is_file():
        return _fail(f"trace file not found: {trace_path}")
    sidecar_path = trace_path.with_suffix(".json")
    if not sidecar_path.is_file():
        return _fail(f"sidecar not found next to trace: {sidecar_path}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    with open(trace_path) as fh:
        rows = list(csv.DictReader(fh))
    omegas = np.array([float(row["omega"]) for row in rows])
    if np.isnan(omegas).any():
        return _fail("trace has no omega values (baseline runs do not define them)")
    job = sidecar["job"]
    bound = sidecar.get("subgradient_bound")
    bound = float("inf") if bound == "inf" else float(bound)
    g = harness.build_regularizer(job, sidecar["constants"]["dim"])
    report = analysis.contraction_report(
        omegas,
        mu=sidecar["constants"]["mu"],
        eta=job["eta"],
        eta_g=job["eta_g"],
        tau=job["tau"],
        n=sidecar["constants"]["n"],
        batch=job["batch"],
        sigma_sq=sidecar.get("sigma_sq_estimate") or 0.0,
        subgrad_bound=bound,
        g=g,
        grad_norm_at_star=sidecar.get("grad_norm_at_star"),
    )
    out_path = Path(args.out) if args.out else trace_path.with_suffix(".report.json")
    with open(out_path, "w") as fh:
        json.dump(harness.json_sanitize(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out_path}")
    return 0


def _cmd_preset(args) -> int:
    seeds = None
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(","))
    jobs = harness.preset_jobs(
        args.name,
        grad=args.grad,
        sweep=args.sweep,
        rounds=args.rounds,
        seeds=seeds,
        d=args.d,
    )
    if args.dry_run:
        print(json.dumps(harness.json_sanitize(jobs), indent=2, sort_keys=True))
        return 0
    out_dir = Path(args.out or f"runs/{args.name}")
    paths = harness.run_jobs(jobs, out_dir)
    print(f"wrote {len(paths)} traces under {out_dir}")
    return 0


_COMMANDS = {
    "datagen": _cmd_datagen,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "solve-ref": _cmd_solve_ref,
    "analyze": _cmd_analyze,
    "preset": _cmd_preset,
}


def cli_main(argv: list[str] | None = None) -> int:
    """Parse argv and dispatch; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the diagnostic
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (harness.ConfigError, ValueError) as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(str(exc))
    except RuntimeError as exc:
        return _fail(str(exc))


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
