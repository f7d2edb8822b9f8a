"""Certified Picard iteration for smooth normal PDE Cauchy problems.

A Banach fixed-point engine for contractions with loss of derivatives in
graded spaces, applied as a constructive Picard solver and convergence
certifier for normal Cauchy problems, with closed-form series solutions
for the linear class.
"""

from .expr import Arity, Expr, parse_expression, print_expression, eval_expr
from .funcspace import (
    Domain,
    Radii,
    SepFunc,
    ball_check,
    graded_norm,
    interpolate,
    iterated_time_integral,
    joint_norm,
    partial_derivative,
)
from .graded_core import (
    GradedSpaceHandle,
    IterationStop,
    LodCertificate,
    LodConstants,
    a_posteriori_bound,
    invert_locally,
    iterate_to_fixed_point,
    product_constants,
    solve_equation,
    w_prime_diagnostic,
    weissinger_sum,
)
from .linear_series import (
    GrowthClass,
    LinearProblem,
    burgers_demo,
    classify_convergence,
    example_catalog,
    increment_bound,
    mu_eta_recursions,
    parameter_limit_experiment,
    picard_closed_form,
    radii_from_series,
    series_solution,
)
from .picard_pde import (
    CauchyProblem,
    LipschitzFactors,
    SolveConfig,
    apply_P,
    certify_weissinger,
    check_ball_invariance,
    constant_bounds,
    estimate_lipschitz,
    eval_G,
    initial_polynomial,
    lambda_bar,
    lambda_recursion,
    residual,
    solve,
)

__version__ = "0.1.0"
