"""Composite federated learning simulator.

Library + CLI for composite (smooth + non-smooth) federated optimization:
a drift-corrected local-update algorithm with decoupled proximal evaluation
and communication, baselines (FedMid, FedDA, Fast-FedDA), synthetic
heterogeneous data generation, and convergence instrumentation.
"""

from .algorithm import (
    HyperParams,
    RoundTrace,
    ServerState,
    WorkerState,
    init,
    local_round,
    run,
    run_vectorized,
    server_aggregate,
    theoretical_stepsize,
    update_correction,
)
from .analysis import (
    LyapunovRecord,
    ReferenceSolution,
    contraction_report,
    estimate_sigma_sq,
    local_directions,
    lyapunov,
    lyapunov_series,
    optimality,
    plateau,
    rounds_to_reach,
    solve_reference,
)
from .baselines import run_fastfedda, run_fedda, run_fedmid
from .datagen import GenSpec, generate, generate_detailed, heterogeneity_report
from .objective import (
    Problem,
    SmoothSpec,
    WorkerDataset,
    average_gradient,
    average_loss,
    constants,
    full_gradient,
    loss,
    minibatch_gradient,
    sample_batch,
)
from .prox import L1, Box, L2Ball, Regularizer, Zero, prox, reference_prox, subgradient_bound

__version__ = "0.1.0"

__all__ = [
    "Box",
    "GenSpec",
    "HyperParams",
    "L1",
    "L2Ball",
    "LyapunovRecord",
    "Problem",
    "ReferenceSolution",
    "Regularizer",
    "RoundTrace",
    "ServerState",
    "SmoothSpec",
    "WorkerDataset",
    "WorkerState",
    "Zero",
    "average_gradient",
    "average_loss",
    "constants",
    "contraction_report",
    "estimate_sigma_sq",
    "full_gradient",
    "generate",
    "generate_detailed",
    "heterogeneity_report",
    "init",
    "local_directions",
    "local_round",
    "loss",
    "lyapunov",
    "lyapunov_series",
    "minibatch_gradient",
    "optimality",
    "plateau",
    "prox",
    "reference_prox",
    "rounds_to_reach",
    "run",
    "run_fastfedda",
    "run_fedda",
    "run_fedmid",
    "run_vectorized",
    "sample_batch",
    "server_aggregate",
    "solve_reference",
    "subgradient_bound",
    "theoretical_stepsize",
    "update_correction",
]
