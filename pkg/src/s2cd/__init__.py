"""Semi-stochastic coordinate descent for strongly convex finite sums.

Minimizes ``f(x) = (1/n) sum_i f_i(x)`` over sparse linear models by
combining per-epoch full gradients with nonuniformly sampled single-coordinate
corrections, plus baselines (GD, SGD, nonuniform CD, semi-stochastic full
gradient), exact estimator audits, and a benchmark CLI.
"""

from .dataset import (
    DatasetFormatError,
    SparseDataset,
    dataset_from_arrays,
    dataset_from_dense,
    generate_dataset,
    load_libsvm,
)
from .diagnostics import (
    ConditionReport,
    EstimatorAudit,
    ReferenceSolution,
    audit_estimator,
    check_cocoercivity,
    check_smoothness_probe,
    condition_report,
    solve_reference,
)
from .problem import (
    LossKind,
    Problem,
    RegMode,
    ResidualCache,
    StaleCacheError,
    apply_coordinate_step,
    build_problem,
    component_gradient,
    component_partial,
    component_value,
    derive_sampling_tables,
    full_gradient,
    partial,
    value,
)
from .sampling import (
    DiscreteDistribution,
    GeometricLaw,
    PairSampler,
    build_distribution,
    make_rng,
    sample_inner_length,
    sample_pair,
)
from .solvers import (
    DivergenceError,
    RunTrace,
    SolverConfig,
    TheoreticalRate,
    cd_nonuniform,
    default_params,
    gd,
    s2cd,
    s2gd,
    sgd,
    theoretical_rate,
)

__version__ = "0.1.0"
