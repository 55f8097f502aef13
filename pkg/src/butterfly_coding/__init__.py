"""Task-aware linear network coding over the butterfly network.

Pick encoder matrices for the five links and decoder matrices for the two
sinks so that each sink's linear task is reconstructed with least mean squared
error, compare against the spectral lower bound, and reproduce the synthetic
sweeps.
"""

from .subspace import (
    Basis,
    DEFAULT_TOL,
    DimensionMismatch,
    InfeasibleExtension,
    ToleranceConfig,
    extend_from_pool,
    intersect,
    is_subspace_of,
    join,
    orthonormal_basis,
    rank_of,
)
from .model import (
    BadDimensions,
    CholeskyFailed,
    NotPSD,
    ObservationConstraintViolated,
    ProblemInstance,
    TaskSpectrum,
    WhitenedInstance,
    covariance_from_samples,
    instance_from_json,
    instance_to_json,
    load_samples_csv,
    lower_bound,
    lower_bound_of,
    observation_bases,
    spectrum,
    task_bases,
    task_pca,
    validate,
    whiten,
)
from .code import (
    ButterflyCode,
    CodeSpans,
    InvalidSpan,
    check_code_shapes,
    code_from_json,
    code_to_json,
    exact_loss,
    flow_spans,
    lift_code,
    optimal_decoders,
    realize_spans,
    utilities,
    with_optimal_decoders,
)
from .analytic import (
    ConditionReport,
    PreconditionNotMet,
    construct_lb_code,
    necessary_report,
    sufficient_report,
)
from .train import (
    DivergenceDetected,
    TrainConfig,
    export_trace_csv,
    greedy_benchmark_code,
    init_code,
    train,
)
from .bench import (
    ConfigError,
    InfeasibleSpec,
    ResultRecord,
    SyntheticSpec,
    flat_tail_profile,
    gen_synthetic,
    main,
    read_config,
    read_csv,
    run_sweep,
    write_csv,
)

__all__ = [
    "BadDimensions",
    "Basis",
    "ButterflyCode",
    "CholeskyFailed",
    "CodeSpans",
    "ConditionReport",
    "ConfigError",
    "DEFAULT_TOL",
    "DimensionMismatch",
    "DivergenceDetected",
    "InfeasibleExtension",
    "InfeasibleSpec",
    "InvalidSpan",
    "NotPSD",
    "ObservationConstraintViolated",
    "PreconditionNotMet",
    "ProblemInstance",
    "ResultRecord",
    "SyntheticSpec",
    "TaskSpectrum",
    "ToleranceConfig",
    "TrainConfig",
    "WhitenedInstance",
    "check_code_shapes",
    "code_from_json",
    "code_to_json",
    "construct_lb_code",
    "covariance_from_samples",
    "exact_loss",
    "export_trace_csv",
    "extend_from_pool",
    "flat_tail_profile",
    "flow_spans",
    "gen_synthetic",
    "greedy_benchmark_code",
    "init_code",
    "instance_from_json",
    "instance_to_json",
    "intersect",
    "is_subspace_of",
    "join",
    "lift_code",
    "load_samples_csv",
    "lower_bound",
    "lower_bound_of",
    "main",
    "necessary_report",
    "observation_bases",
    "optimal_decoders",
    "orthonormal_basis",
    "rank_of",
    "read_config",
    "read_csv",
    "realize_spans",
    "run_sweep",
    "spectrum",
    "sufficient_report",
    "task_bases",
    "task_pca",
    "train",
    "utilities",
    "validate",
    "whiten",
    "with_optimal_decoders",
]
