"""Prescribed-mean-curvature graphs over warped-product fibers.

Structured finite-difference calculus on flat/conformal torus and disk
fibers, graph quantities over a warping function, a damped Newton and a
descent-flow solver for the prescribed-curvature equation, and a scenario
runner with a small formula language and a command-line front end.
"""

from .geometry import (
    BoundaryKind,
    ConstructionError,
    FiberGrid,
    GridKind,
    GridMismatchError,
    MetricField,
    ModelDomainError,
    ScalarField,
    VectorField,
    build_hyperbolic_disk,
    build_polar_disk,
    build_torus,
    coordinate_partials,
    divergence,
    dump_field_csv,
    gradient,
    hyperbolic_conformal_factor,
    inner,
    integrate,
    laplace_beltrami,
    lift_to_circle,
    norm_sq,
    volume,
)
from .warped import (
    AngleFunction,
    GraphState,
    PreconditionError,
    WarpedProduct,
    check_conformal_laplacian,
    check_height_identity,
    check_superharmonic,
    compatibility_integral,
    conformal_scale,
    induced_metric,
    mean_curvature_residual,
    obstruction_witness,
    quasi_isometry_constants,
    radial_ricci,
    unit_normal,
)
from .solver import (
    SolveOptions,
    SolveReport,
    flow_solve,
    maximum_principle_check,
    newton_solve,
)
from .formulas import FormulaError, evaluate_formula
from .scenarios import (
    BUILTIN_SCENARIOS,
    RunReport,
    ScenarioConfig,
    ValidationError,
    parse_config,
    run_scenario,
    run_verification_suite,
)

__all__ = [
    "AngleFunction",
    "BoundaryKind",
    "BUILTIN_SCENARIOS",
    "ConstructionError",
    "FiberGrid",
    "FormulaError",
    "GraphState",
    "GridKind",
    "GridMismatchError",
    "MetricField",
    "ModelDomainError",
    "PreconditionError",
    "RunReport",
    "ScalarField",
    "ScenarioConfig",
    "SolveOptions",
    "SolveReport",
    "ValidationError",
    "VectorField",
    "WarpedProduct",
    "build_hyperbolic_disk",
    "build_polar_disk",
    "build_torus",
    "check_conformal_laplacian",
    "check_height_identity",
    "check_superharmonic",
    "compatibility_integral",
    "conformal_scale",
    "coordinate_partials",
    "divergence",
    "dump_field_csv",
    "evaluate_formula",
    "flow_solve",
    "gradient",
    "hyperbolic_conformal_factor",
    "induced_metric",
    "inner",
    "integrate",
    "laplace_beltrami",
    "lift_to_circle",
    "maximum_principle_check",
    "mean_curvature_residual",
    "newton_solve",
    "norm_sq",
    "obstruction_witness",
    "parse_config",
    "quasi_isometry_constants",
    "radial_ricci",
    "run_scenario",
    "run_verification_suite",
    "unit_normal",
    "volume",
]

__version__ = "0.1.0"
