"""Single-process federated optimization simulator.

Implements one-step Anderson acceleration on top of variance-reduced
first-order local updates (SVRG / SCAFFOLD style corrections), together
with a roster of baselines (FedAvg, GIANT, Newton-GMRES, one-step L-BFGS,
DANE), LIBSVM ingestion, heterogeneous client partitioning, exact
communication accounting, and convergence-trace emission.
"""

from fedosaa.dataset import (
    Dataset,
    Example,
    Partition,
    ParseError,
    parse_libsvm,
    serialize_libsvm,
    partition_iid,
    partition_imbalanced,
    partition_label_skew,
)
from fedosaa.objective import (
    GradientCorrection,
    LogisticModel,
    QuadraticModel,
    corrected_gradient,
    generate_quadratic,
    generate_synthetic_logistic,
)
from fedosaa.linalg import (
    SolverBreakdownError,
    aa_coefficients,
    cg_solve,
    gmres_solve,
    least_squares,
)
from fedosaa.anderson import (
    AADiagnostics,
    AAHistory,
    DegenerateHistoryError,
    aa_step,
    build_history,
    filter_history,
    optimization_gain,
)
from fedosaa.algorithms import AlgoConfig, CommLedger, RoundState, run_round
from fedosaa.harness import (
    ExperimentConfig,
    ProblemConfig,
    TraceRecord,
    build_problem,
    emit_traces,
    reference_minimizer,
    run_experiment,
)

__all__ = [
    "AADiagnostics",
    "AAHistory",
    "AlgoConfig",
    "CommLedger",
    "Dataset",
    "DegenerateHistoryError",
    "Example",
    "ExperimentConfig",
    "GradientCorrection",
    "LogisticModel",
    "ParseError",
    "Partition",
    "ProblemConfig",
    "QuadraticModel",
    "RoundState",
    "SolverBreakdownError",
    "TraceRecord",
    "aa_coefficients",
    "aa_step",
    "build_history",
    "build_problem",
    "cg_solve",
    "corrected_gradient",
    "emit_traces",
    "filter_history",
    "generate_quadratic",
    "generate_synthetic_logistic",
    "gmres_solve",
    "least_squares",
    "optimization_gain",
    "parse_libsvm",
    "partition_iid",
    "partition_imbalanced",
    "partition_label_skew",
    "reference_minimizer",
    "run_experiment",
    "run_round",
    "serialize_libsvm",
]
