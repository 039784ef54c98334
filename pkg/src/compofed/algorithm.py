"""Drift-corrected composite federated optimizer.

One communication round r works on two coupled model states per worker: a
pre-proximal iterate z_hat that accumulates gradient steps linearly, and a
post-proximal iterate z = prox(g, (t+1)*eta, z_hat) at which gradients are
evaluated.  Workers send the *pre*-proximal z_hat after tau local steps, so
the server's average recovers the exact mean of local gradient sums despite
the nonlinearity of the proximal map.  A per-worker correction c_i (the mean
gradient direction of the previous round minus the worker's own) removes
client drift; corrections always sum to zero across workers.

Two interchangeable engines are provided: :func:`run` executes the per-worker
message-passing form, while :func:`run_vectorized` executes the equivalent
recursion on stacked (n, d) states with the correction written explicitly as
"average minus local" of the previous round's gradient sums.  Both replay the
same per-(worker, round, step) batch streams and agree to ~1e-12.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .objective import Problem, SmoothSpec, WorkerDataset, minibatch_gradient, sample_batch
from .prox import Regularizer, prox
from .streams import batch_stream

PROX_SCHEDULES = ("growing", "constant")


@dataclass(frozen=True)
class HyperParams:
    """Round/step-size parameters; batch=None means full gradients."""

    rounds: int
    tau: int
    eta: float
    eta_g: float
    batch: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1 or self.tau < 1:
            raise ValueError("rounds and tau must be >= 1")
        if not (self.eta > 0 and self.eta_g > 0):
            raise ValueError("eta and eta_g must be positive")
        if self.batch is not None and self.batch < 1:
            raise ValueError("batch must be >= 1 (or None for full gradients)")

    @property
    def eta_tilde(self) -> float:
        """Server-side prox parameter eta * eta_g * tau, computed once."""
        return self.eta * self.eta_g * self.tau


@dataclass
class WorkerState:
    z_hat: np.ndarray
    z: np.ndarray
    c: np.ndarray
    grad_sum: np.ndarray


@dataclass
class ServerState:
    x_bar: np.ndarray
    x_bar_prox: np.ndarray


@dataclass
class RoundTrace:
    """Per-round history of a run.

    Row k of the arrays corresponds to the state after k completed rounds
    (k = 0 is the initial state), so there are rounds+1 rows.  ``grad_sums``
    has one (n, d) block per completed round: the per-worker sums of the
    stochastic gradients used in that round; baselines leave it None.
    """

    algorithm: str
    seed: int
    eta_tilde: float
    x_bar: np.ndarray
    x_bar_prox: np.ndarray
    wall_ms: np.ndarray
    grad_sums: np.ndarray | None = None

    @property
    def rounds(self) -> int:
        return self.x_bar.shape[0] - 1

    @property
    def final_output(self) -> np.ndarray:
        return self.x_bar_prox[-1]


def thread_count() -> int:
    """Worker-level parallelism cap from COMPOFED_THREADS (default 1)."""
    raw = os.environ.get("COMPOFED_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _ordered_mean(rows) -> np.ndarray:
    """Mean of equal-shape vectors accumulated in ascending index order."""
    it = iter(rows)
    acc = np.array(next(it), dtype=np.float64, copy=True)
    count = 1
    for row in it:
        acc += row
        count += 1
    return acc / count


def init(
    x_bar_1: np.ndarray, n: int, hyper: HyperParams, g: Regularizer
) -> tuple[ServerState, list[WorkerState]]:
    """Initial server state and n worker states with zero corrections."""
    x_bar_1 = np.asarray(x_bar_1, dtype=np.float64)
    if not np.all(np.isfinite(x_bar_1)):
        raise ValueError("initial point must be finite")
    px = prox(g, hyper.eta_tilde, x_bar_1)
    d = x_bar_1.shape[0]
    workers = [
        WorkerState(z_hat=px.copy(), z=px.copy(), c=np.zeros(d), grad_sum=np.zeros(d))
        for _ in range(n)
    ]
    return ServerState(x_bar=x_bar_1.copy(), x_bar_prox=px), workers


def local_round(
    worker: int,
    round_index: int,
    x_bar: np.ndarray,
    c: np.ndarray,
    dataset: WorkerDataset,
    smooth: SmoothSpec,
    hyper: HyperParams,
    g: Regularizer,
    prox_schedule: str = "growing",
    state_log: list | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One worker's tau local steps; returns (final z_hat, gradient sum).

    The worker recomputes the post-proximal start prox(g, eta_tilde, x_bar)
    from the broadcast pre-proximal model.  Each step evaluates the batch
    gradient at the post-proximal z, moves the pre-proximal z_hat by
    -eta*(grad + c), and re-proximalizes with the growing parameter (t+1)*eta
    (``prox_schedule="constant"`` keeps eta_tilde instead; it exists as an
    ablation and is known to break the fixed-point property).
    """
    if prox_schedule not in PROX_SCHEDULES:
        raise ValueError(f"prox_schedule must be one of {PROX_SCHEDULES}")
    px = prox(g, hyper.eta_tilde, x_bar)
    z_hat = px.copy()
    z = px
    grad_sum = np.zeros_like(z_hat)
    b = hyper.batch if hyper.batch is not None else dataset.m
    if b > dataset.m:
        raise ValueError(f"batch size {b} exceeds worker {worker} data size {dataset.m}")
    for t in range(hyper.tau):
        if b == dataset.m:
            batch = np.arange(dataset.m)
        else:
            batch = sample_batch(batch_stream(hyper.seed, worker, round_index, t), dataset.m, b)
        grad = minibatch_gradient(z, dataset, smooth, batch)
        grad_sum += grad
        z_hat = z_hat - hyper.eta * (grad + c)
        theta = (t + 1) * hyper.eta if prox_schedule == "growing" else hyper.eta_tilde
        z = prox(g, theta, z_hat)
        if state_log is not None:
            state_log.append((t + 1, z_hat.copy(), z.copy()))
    return z_hat, grad_sum


def server_aggregate(
    server: ServerState, z_hats: list[np.ndarray], n: int, hyper: HyperParams, g: Regularizer
) -> ServerState:
    """x_bar^{r+1} = prox(x_bar^r) + eta_g * (mean z_hat - prox(x_bar^r))."""
    if len(z_hats) != n:
        raise ValueError(f"expected {n} worker vectors, got {len(z_hats)}")
    mean_z_hat = _ordered_mean(z_hats)
    x_bar_new = server.x_bar_prox + hyper.eta_g * (mean_z_hat - server.x_bar_prox)
    return ServerState(x_bar=x_bar_new, x_bar_prox=prox(g, hyper.eta_tilde, x_bar_new))


def update_correction(
    x_bar_prox_old: np.ndarray,
    x_bar_new: np.ndarray,
    grad_sum: np.ndarray,
    hyper: HyperParams,
) -> np.ndarray:
    """c^{r+1} from the cached prox of x_bar^r and the new x_bar^{r+1}."""
    scale = 1.0 / (hyper.eta_g * hyper.eta * hyper.tau)
    return scale * (x_bar_prox_old - x_bar_new) - grad_sum / hyper.tau


def run(
    problem: Problem,
    hyper: HyperParams,
    g: Regularizer,
    x_bar_1: np.ndarray | None = None,
    prox_schedule: str = "growing",
    algorithm_name: str = "proposed",
    threads: int | None = None,
) -> RoundTrace:
    """Full per-worker simulation of R rounds; returns the round trace.

    Within a round the n local updates are independent; they run on a thread
    pool when ``threads`` (default: COMPOFED_THREADS) exceeds 1.  Results are
    reduced in ascending worker order, so traces are bitwise identical for
    any thread count.
    """
    n, d = problem.n, problem.dim
    if x_bar_1 is None:
        x_bar_1 = np.zeros(d)
    server, workers = init(x_bar_1, n, hyper, g)

    R = hyper.rounds
    x_bars = np.empty((R + 1, d))
    x_proxes = np.empty((R + 1, d))
    grad_sums = np.empty((R, n, d))
    wall_ms = np.zeros(R + 1)
    x_bars[0] = server.x_bar
    x_proxes[0] = server.x_bar_prox

    threads = thread_count() if threads is None else max(1, threads)

    def one_worker(i: int) -> tuple[np.ndarray, np.ndarray]:
        return local_round(
            i,
            round_index,
            server.x_bar,
            workers[i].c,
            problem.workers[i],
            problem.smooth,
            hyper,
            g,
            prox_schedule=prox_schedule,
        )

    for round_index in range(1, R + 1):
        t0 = time.perf_counter()
        if threads > 1 and n > 1:
            with ThreadPoolExecutor(max_workers=min(threads, n)) as pool:
                results = list(pool.map(one_worker, range(n)))
        else:
            results = [one_worker(i) for i in range(n)]
        old_prox = server.x_bar_prox
        server = server_aggregate(server, [zh for zh, _ in results], n, hyper, g)
        for i, (zh, gsum) in enumerate(results):
            workers[i].z_hat = zh
            workers[i].grad_sum = gsum
            workers[i].c = update_correction(old_prox, server.x_bar, gsum, hyper)
            grad_sums[round_index - 1, i] = gsum
        x_bars[round_index] = server.x_bar
        x_proxes[round_index] = server.x_bar_prox
        wall_ms[round_index] = (time.perf_counter() - t0) * 1e3

    return RoundTrace(
        algorithm=algorithm_name,
        seed=hyper.seed,
        eta_tilde=hyper.eta_tilde,
        x_bar=x_bars,
        x_bar_prox=x_proxes,
        wall_ms=wall_ms,
        grad_sums=grad_sums,
    )


def _stacked_batch_gradient(
    Z: np.ndarray,
    feats: np.ndarray,
    labels: np.ndarray,
    batches: np.ndarray,
    l2: float,
) -> np.ndarray:
    """Batch gradients for all workers at once; rows of Z are worker states."""
    n = Z.shape[0]
    rows = np.arange(n)[:, None]
    fb = feats[rows, batches]        # (n, b, d)
    yb = labels[rows, batches]       # (n, b)
    t = yb * np.einsum("nbd,nd->nb", fb, Z)
    coef = -yb * expit(-t)
    return np.einsum("nbd,nb->nd", fb, coef) / batches.shape[1] + l2 * Z


def run_vectorized(
    problem: Problem,
    hyper: HyperParams,
    g: Regularizer,
    x_bar_1: np.ndarray | None = None,
    prox_schedule: str = "growing",
    algorithm_name: str = "proposed",
) -> RoundTrace:
    """Compact-form engine on stacked (n, d) states.

    Implements the three-line recursion directly: the pre-proximal block
    moves by -eta*(gradients + correction block), where the correction block
    is (average - local)/tau of the previous round's gradient sums (zero in
    round 1); each step re-proximalizes rowwise with parameter (t+1)*eta; the
    server update is prox(x_bar) - eta_g*eta*(mean of the round's gradient
    sums).  Batch index streams are identical to :func:`run`.
    """
    if prox_schedule not in PROX_SCHEDULES:
        raise ValueError(f"prox_schedule must be one of {PROX_SCHEDULES}")
    n, d = problem.n, problem.dim
    if x_bar_1 is None:
        x_bar_1 = np.zeros(d)
    x_bar = np.asarray(x_bar_1, dtype=np.float64).copy()
    if not np.all(np.isfinite(x_bar)):
        raise ValueError("initial point must be finite")

    sizes = {ds.m for ds in problem.workers}
    uniform = len(sizes) == 1
    if uniform:
        feats = np.stack([ds.features for ds in problem.workers])
        labels = np.stack([ds.labels for ds in problem.workers])
    m_of = [ds.m for ds in problem.workers]
    b = hyper.batch
    if b is not None and b > min(m_of):
        raise ValueError(f"batch size {b} exceeds smallest worker data size {min(m_of)}")

    R = hyper.rounds
    x_bars = np.empty((R + 1, d))
    x_proxes = np.empty((R + 1, d))
    grad_sums = np.empty((R, n, d))
    wall_ms = np.zeros(R + 1)
    x_bars[0] = x_bar
    x_proxes[0] = prox(g, hyper.eta_tilde, x_bar)

    prev_sums = np.zeros((n, d))
    for r in range(1, R + 1):
        t0 = time.perf_counter()
        px = prox(g, hyper.eta_tilde, x_bar)
        Z_hat = np.tile(px, (n, 1))
        Z = Z_hat.copy()
        # Correction block of round r: (average - local)/tau of round r-1
        # sums; identically zero when r == 1.
        corr = (_ordered_mean(prev_sums) - prev_sums) / hyper.tau
        round_sums = np.zeros((n, d))
        for t in range(hyper.tau):
            if b is None:
                idx = [np.arange(mi) for mi in m_of]
            else:
                idx = [
                    np.arange(m_of[i])
                    if b == m_of[i]
                    else sample_batch(batch_stream(hyper.seed, i, r, t), m_of[i], b)
                    for i in range(n)
                ]
            if uniform and len({a.size for a in idx}) == 1:
                G = _stacked_batch_gradient(
                    Z, feats, labels, np.stack(idx), problem.smooth.l2_weight
                )
            else:
                G = np.stack(
                    [
                        minibatch_gradient(Z[i], problem.workers[i], problem.smooth, idx[i])
                        for i in range(n)
                    ]
                )
            round_sums += G
            Z_hat -= hyper.eta * (G + corr)
            theta = (t + 1) * hyper.eta if prox_schedule == "growing" else hyper.eta_tilde
            Z = prox(g, theta, Z_hat)
        x_bar = px - hyper.eta_g * hyper.eta * _ordered_mean(round_sums)
        prev_sums = round_sums
        grad_sums[r - 1] = round_sums
        x_bars[r] = x_bar
        x_proxes[r] = prox(g, hyper.eta_tilde, x_bar)
        wall_ms[r] = (time.perf_counter() - t0) * 1e3

    return RoundTrace(
        algorithm=algorithm_name,
        seed=hyper.seed,
        eta_tilde=hyper.eta_tilde,
        x_bar=x_bars,
        x_bar_prox=x_proxes,
        wall_ms=wall_ms,
        grad_sums=grad_sums,
    )


def theoretical_stepsize(mu: float, L: float, n: int, tau: int) -> tuple[float, float, float]:
    """Step sizes meeting the linear-convergence condition with equality.

    eta_tilde = mu / (150 L^2) and eta_g = sqrt(n); eta follows from
    eta_tilde = eta * eta_g * tau.  The associated contraction factor is
    1 - mu * eta_tilde / 3.
    """
    if not (mu > 0 and L > 0):
        raise ValueError("mu and L must be positive")
    if n < 1 or tau < 1:
        raise ValueError("n and tau must be >= 1")
    eta_tilde = mu / (150.0 * L * L)
    eta_g = float(np.sqrt(n))
    eta = eta_tilde / (eta_g * tau)
    return eta, eta_g, eta_tilde
