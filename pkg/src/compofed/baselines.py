"""Comparison algorithms sharing the trace/objective/prox infrastructure.

Three federated composite-optimization baselines, each transcribed from its
original source (this package only needs their qualitative behavior):

* ``run_fedmid`` -- federated mirror descent: local proximal SGD, server
  averages the *post-proximal* local models (Yuan, Zaheer & Reddi, ICML 2021,
  "Federated Composite Optimization", Alg. 1).  The primal average of sparse
  iterates is generally dense.
* ``run_fedda`` -- federated dual averaging: workers accumulate scaled
  gradients in a dual state, the server averages in dual space and recovers
  the primal through a single proximal step with a linearly growing
  parameter (same source, Alg. 2).  The server iterate keeps exact sparsity.
* ``run_fastfedda`` -- weighted dual averaging that also aggregates weighted
  past-model sums, with decaying effective steps eta/(k+1) (after Bao et
  al., ICML 2022, "Fast Composite Optimization and Statistical Recovery in
  Federated Learning"); each round communicates both memories, which is the
  extra overhead its source acknowledges.

All three replay the exact batch streams of the proposed algorithm, keyed by
(seed, worker, round, step), so cross-algorithm comparisons see identical
data orderings.
"""

from __future__ import annotations

import time

import numpy as np

from .algorithm import HyperParams, RoundTrace, _ordered_mean
from .objective import Problem, minibatch_gradient, sample_batch
from .prox import Regularizer, prox
from .streams import batch_stream


def _batches(problem: Problem, hyper: HyperParams, worker: int, round_index: int, step: int):
    m = problem.workers[worker].m
    b = hyper.batch if hyper.batch is not None else m
    if b > m:
        raise ValueError(f"batch size {b} exceeds worker {worker} data size {m}")
    if b == m:
        return np.arange(m)
    return sample_batch(batch_stream(hyper.seed, worker, round_index, step), m, b)


def run_fedmid(
    problem: Problem,
    hyper: HyperParams,
    g: Regularizer,
    x_bar_1: np.ndarray | None = None,
) -> RoundTrace:
    """Local proximal SGD with primal averaging (no drift correction)."""
    n, d = problem.n, problem.dim
    x_bar = np.zeros(d) if x_bar_1 is None else np.asarray(x_bar_1, dtype=np.float64).copy()
    R = hyper.rounds
    xs = np.empty((R + 1, d))
    wall_ms = np.zeros(R + 1)
    xs[0] = x_bar
    for r in range(1, R + 1):
        t0 = time.perf_counter()
        finals = []
        for i in range(n):
            z = x_bar.copy()
            for t in range(hyper.tau):
                grad = minibatch_gradient(
                    z, problem.workers[i], problem.smooth, _batches(problem, hyper, i, r, t)
                )
                z = prox(g, hyper.eta, z - hyper.eta * grad)
            finals.append(z)
        x_bar = x_bar + hyper.eta_g * (_ordered_mean(finals) - x_bar)
        xs[r] = x_bar
        wall_ms[r] = (time.perf_counter() - t0) * 1e3
    return RoundTrace(
        algorithm="fedmid",
        seed=hyper.seed,
        eta_tilde=hyper.eta_tilde,
        x_bar=xs,
        x_bar_prox=xs.copy(),
        wall_ms=wall_ms,
    )


def run_fedda(
    problem: Problem,
    hyper: HyperParams,
    g: Regularizer,
    x_bar_1: np.ndarray | None = None,
) -> RoundTrace:
    """Local dual averaging; the server averages dual states and proxes once.

    Worker i's dual state accumulates eta-scaled stochastic gradients; the
    primal point for the k-th cumulative local step is
    prox(g, k*eta, x0 - dual), the growing parameter matching the k gradients
    already folded into the dual sum.  With g = 0 and tau = 1 this reduces to
    plain averaged SGD.
    """
    n, d = problem.n, problem.dim
    x0 = np.zeros(d) if x_bar_1 is None else np.asarray(x_bar_1, dtype=np.float64).copy()
    dual = np.zeros(d)
    R = hyper.rounds
    pre = np.empty((R + 1, d))
    out = np.empty((R + 1, d))
    wall_ms = np.zeros(R + 1)
    pre[0] = x0 - dual
    out[0] = prox(g, 0.0, x0)
    for r in range(1, R + 1):
        t0 = time.perf_counter()
        locals_ = []
        for i in range(n):
            s = dual.copy()
            for t in range(hyper.tau):
                k = (r - 1) * hyper.tau + t
                w = prox(g, k * hyper.eta, x0 - s)
                grad = minibatch_gradient(
                    w, problem.workers[i], problem.smooth, _batches(problem, hyper, i, r, t)
                )
                s = s + hyper.eta * grad
            locals_.append(s)
        dual = dual + hyper.eta_g * (_ordered_mean(locals_) - dual)
        steps_done = r * hyper.tau
        pre[r] = x0 - dual
        out[r] = prox(g, steps_done * hyper.eta, x0 - dual)
        wall_ms[r] = (time.perf_counter() - t0) * 1e3
    return RoundTrace(
        algorithm="fedda",
        seed=hyper.seed,
        eta_tilde=hyper.eta_tilde,
        x_bar=pre,
        x_bar_prox=out,
        wall_ms=wall_ms,
    )


def fastfedda_step(eta: float, k: int) -> float:
    """Decaying effective step for the k-th cumulative local step (k >= 0)."""
    return eta / (k + 1.0)


def _weighted_da_primal(
    g: Regularizer, x0: np.ndarray, U: np.ndarray, V: np.ndarray, A: float, eta: float, k: int
) -> np.ndarray:
    if A == 0.0:
        return prox(g, 0.0, x0)
    gamma = fastfedda_step(eta, k)
    return prox(g, gamma, V / A - gamma * (U / A))


def run_fastfedda(
    problem: Problem,
    hyper: HyperParams,
    g: Regularizer,
    x_bar_1: np.ndarray | None = None,
) -> RoundTrace:
    """Weighted dual averaging over past gradients *and* past models.

    Step k carries weight k+1; workers maintain weighted sums U (gradients)
    and V (models), and retrieve the primal from
    argmin <U/A, w> + g(w) + (1/(2*gamma_k)) ||w - V/A||^2 with the decaying
    gamma_k = eta/(k+1).  The server averages both memories each round (a
    2d-vector upload, the overhead this scheme is known for).  With empty
    history the first retrieval returns the anchor point, so round 1 is a
    single dual-averaging step.
    """
    n, d = problem.n, problem.dim
    x0 = np.zeros(d) if x_bar_1 is None else np.asarray(x_bar_1, dtype=np.float64).copy()
    U = np.zeros(d)
    V = np.zeros(d)
    A = 0.0
    R = hyper.rounds
    pre = np.empty((R + 1, d))
    out = np.empty((R + 1, d))
    wall_ms = np.zeros(R + 1)
    pre[0] = x0
    out[0] = _weighted_da_primal(g, x0, U, V, A, hyper.eta, 0)
    for r in range(1, R + 1):
        t0 = time.perf_counter()
        local_u, local_v = [], []
        for i in range(n):
            u_i, v_i, a_i = U.copy(), V.copy(), A
            for t in range(hyper.tau):
                k = (r - 1) * hyper.tau + t
                w = _weighted_da_primal(g, x0, u_i, v_i, a_i, hyper.eta, k)
                grad = minibatch_gradient(
                    w, problem.workers[i], problem.smooth, _batches(problem, hyper, i, r, t)
                )
                weight = k + 1.0
                u_i += weight * grad
                v_i += weight * w
                a_i += weight
            local_u.append(u_i)
            local_v.append(v_i)
        U = U + hyper.eta_g * (_ordered_mean(local_u) - U)
        V = V + hyper.eta_g * (_ordered_mean(local_v) - V)
        # The weight total is deterministic and identical across workers.
        A = A + sum(range((r - 1) * hyper.tau + 1, r * hyper.tau + 1))
        k_now = r * hyper.tau
        pre[r] = V / A if A > 0 else x0
        out[r] = _weighted_da_primal(g, x0, U, V, A, hyper.eta, k_now)
        wall_ms[r] = (time.perf_counter() - t0) * 1e3
    return RoundTrace(
        algorithm="fastfedda",
        seed=hyper.seed,
        eta_tilde=hyper.eta_tilde,
        x_bar=pre,
        x_bar_prox=out,
        wall_ms=wall_ms,
    )


BASELINES = {
    "fedmid": run_fedmid,
    "fedda": run_fedda,
    "fastfedda": run_fastfedda,
}
