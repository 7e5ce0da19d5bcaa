"""Decentralized optimization with gradient tracking over finite-time-consensus sequences."""

from .algorithm import NetworkState, RunConfig, init_state, run, step_original, step_transformed
from .errors import (
    AdmissibilityError,
    ConvergenceError,
    DegenerateConstantsError,
    DivergenceError,
    FTCError,
    InvalidInputError,
    InvalidParameterError,
)
from .ftc import (
    MatrixSeq,
    check_assumption4,
    contraction_norm,
    epsilon_tau,
    hypercube_sequence,
    laplacian_factor_sequence,
    perturb_sequence,
    truncate_sequence,
)
from .graphs import Graph, build_topology, laplacian, metropolis_weights, parse_topology
from .metrics import Trace, stepsize_limits, thm1_bound, thm2_bound
from .problems import BoundParams, Problem, estimate_constants, generate_logistic, solve_centralized

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError", "BoundParams", "ConvergenceError", "DegenerateConstantsError", "DivergenceError",
    "FTCError", "Graph", "InvalidInputError", "InvalidParameterError", "MatrixSeq", "NetworkState", "Problem",
    "RunConfig", "Trace", "build_topology", "check_assumption4", "contraction_norm", "epsilon_tau",
    "estimate_constants", "generate_logistic", "hypercube_sequence", "init_state", "laplacian",
    "laplacian_factor_sequence", "metropolis_weights", "parse_topology", "perturb_sequence", "run",
    "solve_centralized", "step_original", "step_transformed", "stepsize_limits", "thm1_bound", "thm2_bound",
    "truncate_sequence",
]
