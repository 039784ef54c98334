"""Ground-truth solver, optimality metric, and Lyapunov instrumentation.

The reference solution x* is computed by accelerated proximal gradient with
adaptive restart and certified through the fixed-point identity
x* = prox(g, beta, x* - beta * grad f(x*)).  Convergence of a run is tracked
by the scalar

    Omega^r = ||prox(x_bar^r) - x*||^2 + ||Lambda^r - mean(Lambda^r)||^2 / n,

where Lambda_i^r collects worker i's accumulated local direction: eta times
(tau * grad f_i at the post-proximal global model, plus the previous round's
average-minus-local stochastic gradient sums).  The first term measures
distance to the optimum, the second the inconsistency of local directions
(client drift).  Under the step-size rule of :func:`~compofed.algorithm.
theoretical_stepsize` the sequence contracts at least by 1 - mu*eta_tilde/3
per round, up to a stochastic residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .algorithm import HyperParams, RoundTrace, _ordered_mean
from .objective import Problem, average_gradient, constants, full_gradient, minibatch_gradient, sample_batch
from .prox import L2Ball, Box, Regularizer, prox
from .streams import generic_stream


@dataclass(frozen=True)
class ReferenceSolution:
    x_star: np.ndarray
    fixed_point_residual: float
    iterations: int


def _fista(gradient, step, g, x0, tol, max_iter, residual_step, check_every=20):
    """FISTA with gradient-based adaptive restart on a composite objective."""
    x = np.asarray(x0, dtype=np.float64).copy()
    y = x.copy()
    momentum = 1.0
    residual = math.inf
    for k in range(1, max_iter + 1):
        x_new = prox(g, step, y - step * gradient(y))
        if (y - x_new) @ (x_new - x) > 0:
            momentum = 1.0  # restart: momentum was pointing uphill
        momentum_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
        y = x_new + ((momentum - 1.0) / momentum_new) * (x_new - x)
        x = x_new
        momentum = momentum_new
        if k % check_every == 0 or k == max_iter:
            fp = prox(g, residual_step, x - residual_step * gradient(x))
            residual = float(np.linalg.norm(x - fp))
            if residual <= tol * (1.0 + float(np.linalg.norm(x))):
                return x, residual, k
    raise RuntimeError(
        f"reference solve did not converge in {max_iter} iterations "
        f"(fixed-point residual {residual:.3e}, tolerance {tol:.3e})"
    )


def _average_curvature_bound(problem: Problem) -> float:
    """Smoothness constant of the averaged loss via its pooled quadratic bound."""
    d = problem.dim
    v = np.ones(d) + np.linspace(0.0, 0.5, d)
    v /= np.linalg.norm(v)

    def op(vec):
        acc = np.zeros(d)
        for ds in problem.workers:
            acc += ds.features.T @ (ds.features @ vec) / (4.0 * ds.m)
        return acc / problem.n

    lam_prev = 0.0
    lam = 0.0
    for _ in range(100_000):
        w = op(v)
        lam = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            lam = 0.0
            break
        v = w / norm
        if abs(lam - lam_prev) <= 1e-9 * max(abs(lam), 1e-30):
            break
        lam_prev = lam
    return problem.smooth.l2_weight + lam


def solve_reference(
    problem: Problem,
    g: Regularizer,
    tol: float = 1e-13,
    max_iter: int = 1_000_000,
) -> ReferenceSolution:
    """Solve min f + g to a fixed-point residual of tol*(1+||x*||).

    Internally steps with 1/L of the *averaged* loss (tighter than the
    per-worker maximum, which matters when workers pull in different
    directions), but the certificate residual is evaluated at beta = 1/L for
    the per-worker constant so it matches the contract of
    :func:`~compofed.objective.constants`.
    """
    mu, L = constants(problem.workers, problem.smooth)
    if mu <= 0:
        raise ValueError("reference solve needs l2_weight > 0 (unique minimizer)")
    L_avg = _average_curvature_bound(problem)
    step = 1.0 / L_avg

    def gradient(x):
        return average_gradient(x, problem)

    x_star, residual, iterations = _fista(
        gradient, step, g, np.zeros(problem.dim), tol, max_iter, residual_step=1.0 / L
    )
    return ReferenceSolution(x_star=x_star, fixed_point_residual=residual, iterations=iterations)


def optimality(x_bar: np.ndarray, eta_tilde: float, g: Regularizer, x_star: np.ndarray) -> float:
    """||prox(g, eta_tilde, x_bar) - x*|| / ||x*||."""
    norm_star = float(np.linalg.norm(x_star))
    if norm_star == 0.0:
        raise ValueError("optimality metric undefined for x* = 0")
    return float(np.linalg.norm(prox(g, eta_tilde, x_bar) - x_star)) / norm_star


@dataclass(frozen=True)
class LyapunovRecord:
    omega: float
    dist_sq: float
    drift_sq: float
    lam: np.ndarray


def local_directions(
    round_index: int, trace: RoundTrace, problem: Problem, hyper: HyperParams
) -> tuple[np.ndarray, np.ndarray]:
    """Lambda^r as an (n, d) stack plus its worker mean.

    ``round_index`` is 1-based (round 1 is the initial state).  Round 1 uses
    the zero convention for the nonexistent round-0 gradient sums, so
    Lambda_i^1 = eta * tau * grad f_i(prox(x_bar^1)).
    """
    if trace.grad_sums is None:
        raise ValueError("trace has no per-worker gradient sums")
    if not (1 <= round_index <= trace.rounds + 1):
        raise ValueError(f"round_index must be in [1, {trace.rounds + 1}]")
    n, d = problem.n, problem.dim
    px = trace.x_bar_prox[round_index - 1]
    if round_index >= 2:
        prev = trace.grad_sums[round_index - 2]
    else:
        prev = np.zeros((n, d))
    avg_prev = _ordered_mean(prev)
    base = np.stack([full_gradient(px, ds, problem.smooth) for ds in problem.workers])
    lam = hyper.eta * (hyper.tau * base + avg_prev - prev)
    return lam, _ordered_mean(lam)


def lyapunov(
    round_index: int,
    trace: RoundTrace,
    problem: Problem,
    hyper: HyperParams,
    x_star: np.ndarray,
) -> LyapunovRecord:
    """Omega^r = dist_sq + drift_sq at the given (1-based) round."""
    lam, lam_bar = local_directions(round_index, trace, problem, hyper)
    diff = trace.x_bar_prox[round_index - 1] - x_star
    dist_sq = float(diff @ diff)
    dev = lam - lam_bar
    drift_sq = float(np.sum(dev * dev)) / problem.n
    return LyapunovRecord(omega=dist_sq + drift_sq, dist_sq=dist_sq, drift_sq=drift_sq, lam=lam)


def lyapunov_series(
    trace: RoundTrace, problem: Problem, hyper: HyperParams, x_star: np.ndarray
) -> list[LyapunovRecord]:
    """LyapunovRecord for every stored round, r = 1 .. rounds+1."""
    return [lyapunov(r, trace, problem, hyper, x_star) for r in range(1, trace.rounds + 2)]


def estimate_sigma_sq(
    problem: Problem, x: np.ndarray, batch: int, draws: int = 1000, seed: int = 0
) -> float:
    """Empirical stochastic-gradient variance scale at x.

    Estimates sigma^2 such that E||grad_i(x; B) - grad_i(x)||^2 ~ sigma^2/b,
    by averaging squared deviations over workers and ``draws`` batch draws per
    worker, then multiplying by b.  Report context only; nothing asserts it.
    """
    rng = generic_stream(seed, label=0x51)
    total = 0.0
    count = 0
    for ds in problem.workers:
        mean_grad = full_gradient(x, ds, problem.smooth)
        for _ in range(draws):
            idx = sample_batch(rng, ds.m, min(batch, ds.m))
            dev = minibatch_gradient(x, ds, problem.smooth, idx) - mean_grad
            total += float(dev @ dev)
            count += 1
    return batch * total / count


def plateau(series: np.ndarray) -> float:
    """Floor estimate: minimum over the trailing 20% of the series."""
    series = np.asarray(series, dtype=np.float64)
    tail = max(1, series.size // 5)
    return float(np.min(series[-tail:]))


def rounds_to_reach(series: np.ndarray, level: float) -> int | None:
    """First (0-based) index at which the series is <= level, or None."""
    hits = np.nonzero(np.asarray(series) <= level)[0]
    return int(hits[0]) if hits.size else None


def contraction_report(
    omegas: np.ndarray,
    *,
    mu: float,
    eta: float,
    eta_g: float,
    tau: int,
    n: int,
    batch: int | None,
    sigma_sq: float = 0.0,
    subgrad_bound: float = 0.0,
    g: Regularizer | None = None,
    grad_norm_at_star: float | None = None,
) -> dict:
    """Fit the observed linear rate and compare with the predicted bound.

    The observed floor is the trailing-20% minimum; the observed per-round
    factor comes from a least-squares fit of log(Omega^r - floor).  The
    predicted ceiling is (1 - mu*eta_tilde/3) for the factor and
    30*eta*eta_g*sigma^2/(mu*n*b) + 21*tau*eta*eta_g*B_g^2/(mu*n) for the
    residual; when g is an indicator and grad f(x*) ~ 0 the B_g term is
    dropped (reported as ``corollary_mode``).
    """
    omegas = np.asarray(omegas, dtype=np.float64)
    if omegas.size < 2:
        raise ValueError("need at least two rounds of Omega values")
    eta_tilde = eta * eta_g * tau
    floor = plateau(omegas)
    predicted_factor = 1.0 - mu * eta_tilde / 3.0

    indicator = isinstance(g, (L2Ball, Box)) if g is not None else False
    corollary_mode = bool(
        indicator and grad_norm_at_star is not None and grad_norm_at_star <= 1e-8
    )
    sigma_term = (
        30.0 * eta * eta_g * sigma_sq / (mu * n * batch) if batch else 0.0
    )
    if corollary_mode:
        bg_term = 0.0
    else:
        bg_term = 21.0 * tau * eta * eta_g * subgrad_bound**2 / (mu * n)
    predicted_floor = sigma_term + bg_term

    shifted = omegas - floor
    cutoff = 1e-3 * shifted[0] if shifted[0] > 0 else 0.0
    below = np.nonzero(shifted <= cutoff)[0]
    end = int(below[0]) if below.size else int(shifted.size)
    if shifted[0] <= 0 or end < 3:
        observed_factor = 1.0
        contracting = False
    else:
        # Fit the decaying prefix, before the series first dips to the floor.
        slope = np.polyfit(np.arange(end), np.log(shifted[:end]), 1)[0]
        observed_factor = float(np.exp(slope))
        contracting = observed_factor < 1.0 - 1e-12

    ratios = [
        omegas[r + 1] / omegas[r]
        for r in range(omegas.size - 1)
        if omegas[r] > max(10.0 * floor, 1e-300)
    ]
    max_round_ratio = float(np.max(ratios)) if ratios else 1.0

    return {
        "rounds": int(omegas.size),
        "observed_factor": observed_factor,
        "max_round_ratio": max_round_ratio,
        "observed_floor": floor,
        "predicted_factor": predicted_factor,
        "predicted_floor": predicted_floor,
        "sigma_term": sigma_term,
        "bg_term": bg_term,
        "corollary_mode": corollary_mode,
        "contracting": contracting,
        "factor_within_theory": bool(observed_factor <= predicted_factor + 1e-12),
        "floor_within_theory": bool(floor <= predicted_floor or not math.isfinite(predicted_floor)),
        "mu": mu,
        "eta": eta,
        "eta_g": eta_g,
        "tau": tau,
        "n": n,
        "batch": batch,
        "sigma_sq": sigma_sq,
        "subgrad_bound": subgrad_bound,
    }
