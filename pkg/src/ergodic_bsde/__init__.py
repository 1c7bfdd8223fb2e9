"""Ergodic quadratic BSDE systems with regime switching: PDE solvers, vanishing discount,
large-time analysis and Monte Carlo checks of the forward-performance representation."""

__version__ = "0.1.0"

from .core_model import (  # noqa: E402
    AprioriConstants,
    DriverSet,
    FactorModel,
    ModelSpec,
    RateMatrix,
    ValidationConfig,
    apriori_constants,
    ou_factor,
    truncate_scalar,
    truncate_vector,
    validate_model,
    validate_rate_matrix,
)
from .drivers import (  # noqa: E402
    ClosedFormBenchmark,
    ConstraintSet,
    ForwardPerformanceDriver,
    TanhTheta,
    benchmark_solution,
    constant_theta,
    eval_controlled_driver,
    eval_fp_driver,
    forward_performance_model,
    optimal_strategy,
    project,
)
from .ergodic_solver import (  # noqa: E402
    ErgodicSolution,
    LargeTimeReport,
    large_time_report,
    long_time_lambda,
    vanishing_discount,
)
from .pde_solver import (  # noqa: E402
    Grid1D,
    ParabolicSolution,
    SchemeConfig,
    compute_z,
    solve_discounted_stationary,
    solve_finite_horizon,
    step_parabolic,
)
