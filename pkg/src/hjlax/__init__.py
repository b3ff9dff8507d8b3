"""Fundamental solutions, Lax-Oleinik operators, and intrinsic regularization
for discounted Hamilton-Jacobi equations at desk scale."""

from .errors import (
    BoxExhausted,
    ConeViolation,
    ConfigError,
    HJLaxError,
    InsufficientSamples,
    InvalidHorizon,
    NoConvergence,
    NonContraction,
    NonConvergence,
    NonUniqueMaximizer,
    NotSemiconcave,
    NotSingular,
    OutOfWindow,
    SearchBallClipped,
    SingularStart,
)
from .lagrangian import (
    AnalyticKernel,
    GrowthRecord,
    Hamiltonian,
    LegendreResult,
    SampleSpec,
    TonelliLagrangian,
    anisotropic_lagrangian,
    catalog,
    discount_lift,
    free_lagrangian,
    hamiltonian_for,
    hamiltonian_lift,
    legendre_transform,
    mechanical_lagrangian,
    verify_tonelli,
)
from .report import ProbeReport, dump_json
from .gridfn import GridFunction, GridSpec
from .action import (
    Curve,
    DualArc,
    FundamentalSolution,
    action_values_batch,
    dual_arc,
    gradients_A,
    minimize_action,
    probe_compact_containment,
    probe_convexity,
    probe_semiconcavity,
    probe_velocity_bounds,
)
from .laxoleinik import (
    MaximizerRecord,
    OperatorResult,
    check_condition_M,
    estimate_kappa0,
    lax_minus,
    lax_plus,
    require_unique_maximizer,
    solve_cauchy,
)
from .discounted import (
    CalibratedCurve,
    DiscountedSolution,
    backward_calibrated_curve,
    differentiability_mask,
    discounted_step,
    lift_to_evolution,
    solve_discounted,
)
from .lasrylions import (GradientComparison, RegularizationSweep,
                         RegularizedField, SingularTrace, aitken_extrapolants,
                         convergence_sweep, default_probe_points,
                         diagonal_action, gradient_limit_vs_qx,
                         intrinsic_regularize, lambda_sweep_problem_probe,
                         strict_concavity_window, trace_singularity)
from .regularity import (
    SingularSet,
    SuperdiffSet,
    brute_force_H_min,
    grid_classification,
    limiting_differentials,
    min_H_over_superdiff,
    semiconcavity_constant,
    singular_set,
    superdifferential,
)

__version__ = "0.1.0"
