"""Config-driven experiment runner.

A scenario is a JSON document naming a fiber grid, a metric, a warping,
a target curvature, initial (and for disks boundary) data, solver
options, and a list of post-solve checks.  :func:`parse_config` validates
everything eagerly (unknown keys, malformed formulas, sign-violating
warpings, and checks that cannot run on the declared fiber are all
rejected before any solve starts) and produces a normalized echo that
round-trips byte-identically through ``json.dumps(sort_keys=True)``.

:func:`run_scenario` solves, runs the requested checks, and packages a
:class:`RunReport` whose JSON form is deterministic for a fixed config
and seed (wall time is the one excluded field).  A small battery of
refinement studies lives in :func:`run_verification_suite`.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .formulas import Formula, FormulaError, parse_random_spec, random_field_values
from .geometry import (
    ConstructionError,
    FiberGrid,
    GridKind,
    GridMismatchError,
    MetricField,
    ModelDomainError,
    ScalarField,
    build_polar_disk,
    build_torus,
    dump_field_csv,
    gradient,
    laplace_beltrami,
    lift_to_circle,
    norm_sq,
)
from .solver import Gauge, SolveOptions, SolveReport, Verdict, flow_solve, newton_solve
from .warped import (
    GraphState,
    PreconditionError,
    WarpedProduct,
    _tilt_pieces,
    check_conformal_laplacian,
    check_height_identity,
    check_superharmonic,
    compatibility_integral,
    conformal_scale,
    mean_curvature_residual,
    obstruction_threshold,
    quasi_isometry_constants,
    radial_ricci,
    unit_normal,
)


class ValidationError(ValueError):
    """Raised for malformed or inconsistent scenario configs."""


CHECK_NAMES = (
    "height_identity",
    "conformal_laplacian",
    "quasi_isometry",
    "ricci_sign",
    "compatibility",
    "superharmonic",
)

_EXPECTATIONS = ("converged", "obstructed")
_TORUS_KINDS = {"torus": None, "torus2d": None, "torus3d_lifted": None}
_DISK_KINDS = {"disk": None, "disk_polar": None}

_HEIGHT_IDENTITY_TOL = 5e-2
_CONFORMAL_CHECK_TOL = 5e-2
_SUPERHARMONIC_TOL = 1e-6
_RICCI_ZERO_TOL = 1e-14
_LIFT_CIRCLE_NODES = 16

_SOLVER_FIELD_TYPES = {
    "tol_abs": float,
    "max_newton": int,
    "max_linear": int,
    "linear_rtol": float,
    "armijo_c": float,
    "min_step": float,
    "flow_dt_safety": float,
}


def _fiber_env(grid: FiberGrid) -> dict[str, np.ndarray]:
    meshes = grid.meshes()
    if grid.kind is GridKind.disk_polar:
        rho, theta = meshes
        return {
            "rho": rho, "ρ": rho, "theta": theta, "θ": theta,
            "x1": rho * np.cos(theta), "x2": rho * np.sin(theta),
        }
    env = {f"x{i + 1}": m for i, m in enumerate(meshes)}
    return env


def _boundary_env(grid: FiberGrid) -> dict[str, np.ndarray]:
    theta = grid.axes[1]
    return {"theta": theta, "θ": theta}


def _reject_unknown(obj: dict, allowed, where: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown key(s) {unknown} in {where}")


def _field_formula(text, coords, where: str) -> Formula:
    if not isinstance(text, str):
        raise ValidationError(f"{where} must be a formula string, got {type(text).__name__}")
    try:
        return Formula(text, coords)
    except FormulaError as e:
        raise ValidationError(f"{where}: {e}") from e


def _as_field(formula: Formula, grid: FiberGrid, env: dict, where: str) -> ScalarField:
    raw = formula.evaluate(env)
    vals = np.broadcast_to(np.asarray(raw, dtype=float), grid.shape)
    if not np.isfinite(vals).all():
        bad = np.argwhere(~np.isfinite(vals))[0]
        raise ValidationError(
            f"{where} evaluates to a non-finite value at node {tuple(int(i) for i in bad)}"
        )
    return ScalarField(grid, np.array(vals))


@dataclass(frozen=True)
class ScenarioConfig:
    """A validated scenario: built grid objects plus the normalized echo."""

    grid: FiberGrid
    metric: MetricField
    warping: ScalarField
    target: ScalarField
    initial_spec: tuple
    boundary_values: np.ndarray | None
    method: str
    t_max: float
    solver_opts: SolveOptions
    checks: tuple[str, ...]
    expect: str
    normalized: dict = field(repr=False)

    def echo_json(self) -> str:
        return json.dumps(self.normalized, sort_keys=True)

    def initial_values(self, seed_override: int | None = None) -> np.ndarray:
        kind = self.initial_spec[0]
        if kind == "random":
            _, seed, amplitude = self.initial_spec
            if seed_override is not None:
                seed = seed_override
            vals = random_field_values(self.grid.shape, seed, amplitude)
        else:
            _, formula = self.initial_spec
            raw = formula.evaluate(_fiber_env(self.grid))
            vals = np.array(np.broadcast_to(np.asarray(raw, dtype=float), self.grid.shape))
        if self.boundary_values is not None:
            vals[-1, :] = self.boundary_values
        return vals


def _parse_fiber(raw) -> tuple[dict, str]:
    if not isinstance(raw, dict):
        raise ValidationError("fiber must be an object")
    kind = raw.get("kind")
    if kind in _TORUS_KINDS:
        _reject_unknown(raw, ("kind", "dims", "extents"), "fiber")
        dims = raw.get("dims")
        if not (isinstance(dims, list) and len(dims) in (2, 3)
                and all(isinstance(n, int) and not isinstance(n, bool) for n in dims)):
            raise ValidationError("torus fibers need dims: a list of 2 or 3 integers")
        extents = raw.get("extents", [2.0 * math.pi] * len(dims))
        if not (isinstance(extents, list) and len(extents) == len(dims)
                and all(isinstance(e, (int, float)) for e in extents)):
            raise ValidationError("extents must be one positive number per axis")
        return {"kind": "torus2d" if len(dims) == 2 else "torus3d_lifted",
                "dims": list(dims), "extents": [float(e) for e in extents]}, "torus"
    if kind in _DISK_KINDS:
        _reject_unknown(raw, ("kind", "dims", "R"), "fiber")
        dims = raw.get("dims")
        if not (isinstance(dims, list) and len(dims) == 2
                and all(isinstance(n, int) and not isinstance(n, bool) for n in dims)):
            raise ValidationError("disk fibers need dims: [n_r, n_theta]")
        radius = raw.get("R")
        if not isinstance(radius, (int, float)) or isinstance(radius, bool):
            raise ValidationError("disk fibers need a numeric outer radius R")
        return {"kind": "disk_polar", "dims": list(dims), "R": float(radius)}, "disk"
    raise ValidationError(f"unknown fiber kind {kind!r}")


def _build_geometry(fiber_echo: dict, family: str, metric_text: str):
    dims = fiber_echo["dims"]
    try:
        if family == "torus":
            if metric_text == "hyperbolic":
                raise ValidationError("the hyperbolic metric lives on disk fibers")
            if metric_text == "flat":
                return build_torus(dims, fiber_echo["extents"])
            grid, _ = build_torus(dims, fiber_echo["extents"])
            formula = _field_formula(metric_text, _fiber_env(grid).keys(), "metric")
            factor = _as_field(formula, grid, _fiber_env(grid), "metric")
            if factor.values.min() <= 0.0:
                bad = np.argwhere(factor.values <= 0.0)[0]
                raise ValidationError(
                    "metric conformal factor must stay positive, offending node "
                    f"{tuple(int(i) for i in bad)}"
                )
            return build_torus(dims, fiber_echo["extents"], metric_spec=factor.values)
        radius = fiber_echo["R"]
        if metric_text == "hyperbolic":
            if not (0.0 < radius < 1.0):
                raise ValidationError(
                    f"the hyperbolic ball model needs an outer radius in (0, 1), got {radius}"
                )
            grid, _ = build_polar_disk(dims[0], dims[1], radius)
            rho = grid.meshes()[0]
            return build_polar_disk(dims[0], dims[1], radius,
                                    metric_spec=4.0 / (1.0 - rho**2) ** 2)
        if metric_text == "flat":
            return build_polar_disk(dims[0], dims[1], radius)
        grid, _ = build_polar_disk(dims[0], dims[1], radius)
        formula = _field_formula(metric_text, _fiber_env(grid).keys(), "metric")
        factor = _as_field(formula, grid, _fiber_env(grid), "metric")
        if factor.values.min() <= 0.0:
            bad = np.argwhere(factor.values <= 0.0)[0]
            raise ValidationError(
                "metric conformal factor must stay positive, offending node "
                f"{tuple(int(i) for i in bad)}"
            )
        return build_polar_disk(dims[0], dims[1], radius, metric_spec=factor.values)
    except (ConstructionError, ModelDomainError) as e:
        raise ValidationError(str(e)) from e


def _parse_solver(raw, n_dof_hint: str) -> tuple[str, float, SolveOptions, dict]:
    if not isinstance(raw, dict):
        raise ValidationError("solver must be an object")
    allowed = set(_SOLVER_FIELD_TYPES) | {"method", "t_max", "gauge"}
    _reject_unknown(raw, allowed, "solver")
    method = raw.get("method", "newton")
    if method not in ("newton", "flow"):
        raise ValidationError(f"solver method must be newton or flow, got {method!r}")
    if "t_max" in raw and method != "flow":
        raise ValidationError("t_max only applies to the flow method")
    t_max = raw.get("t_max", 10.0)
    if not isinstance(t_max, (int, float)) or isinstance(t_max, bool) or t_max <= 0:
        raise ValidationError("t_max must be a positive number")
    kwargs = {}
    for name, typ in _SOLVER_FIELD_TYPES.items():
        if name in raw:
            value = raw[name]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(f"solver.{name} must be a number")
            if typ is int and int(value) != value:
                raise ValidationError(f"solver.{name} must be an integer")
            kwargs[name] = typ(value)
    if "gauge" in raw:
        try:
            kwargs["gauge"] = Gauge(raw["gauge"])
        except ValueError:
            raise ValidationError(f"unknown gauge {raw['gauge']!r}") from None
    try:
        opts = SolveOptions(**kwargs)
    except ConstructionError as e:
        raise ValidationError(f"solver options: {e}") from e
    echo = {
        "method": method,
        "tol_abs": opts.tol_abs, "max_newton": opts.max_newton,
        "max_linear": opts.max_linear, "linear_rtol": opts.linear_rtol,
        "armijo_c": opts.armijo_c, "min_step": opts.min_step,
        "gauge": opts.gauge.value, "flow_dt_safety": opts.flow_dt_safety,
    }
    if method == "flow":
        echo["t_max"] = float(t_max)
    return method, float(t_max), opts, echo


def _validate_checks(checks, grid: FiberGrid, warping: ScalarField,
                     target: ScalarField) -> tuple[str, ...]:
    if not isinstance(checks, list) or not all(isinstance(c, str) for c in checks):
        raise ValidationError("checks must be a list of check names")
    seen = set()
    for name in checks:
        if name not in CHECK_NAMES:
            raise ValidationError(f"unknown check {name!r}; valid: {', '.join(CHECK_NAMES)}")
        if name in seen:
            raise ValidationError(f"check {name!r} requested twice")
        seen.add(name)
    is_disk = grid.kind is GridKind.disk_polar
    h = warping.values
    h_constant = (h.max() - h.min()) <= 1e-12 * h.max()
    if "conformal_laplacian" in seen and is_disk:
        raise ValidationError("the conformal_laplacian check lifts the fiber by a circle "
                              "and therefore needs a torus fiber")
    if "compatibility" in seen and not grid.closed:
        raise ValidationError("the compatibility check integrates over a closed fiber")
    if "superharmonic" in seen:
        if np.any(target.values > 0.0):
            raise ValidationError("the superharmonic check needs H_target <= 0 node-wise")
        if is_disk and not h_constant:
            raise ValidationError("on a disk the superharmonic check needs constant warping")
    return tuple(checks)


def parse_config(text: str) -> ScenarioConfig:
    """Validate a JSON scenario document into built grid objects."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"config is not valid JSON: {e.msg} "
                              f"(line {e.lineno}, column {e.colno})") from e
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    _reject_unknown(raw, ("fiber", "metric", "warping", "H_target", "initial",
                          "boundary", "solver", "checks", "expect"), "config")
    if "fiber" not in raw:
        raise ValidationError("config needs a fiber section")
    fiber_echo, family = _parse_fiber(raw["fiber"])

    metric_text = raw.get("metric", "flat")
    if not isinstance(metric_text, str):
        raise ValidationError("metric must be a string")
    grid, metric = _build_geometry(fiber_echo, family, metric_text)
    env = _fiber_env(grid)
    coords = env.keys()

    warping_text = raw.get("warping", "1")
    warping = _as_field(_field_formula(warping_text, coords, "warping"), grid, env, "warping")
    if warping.values.min() <= 0.0:
        bad = np.argwhere(warping.values <= 0.0)[0]
        raise ValidationError(
            f"warping must stay positive, offending node {tuple(int(i) for i in bad)}"
        )

    target_text = raw.get("H_target", "0")
    target = _as_field(_field_formula(target_text, coords, "H_target"), grid, env, "H_target")

    initial_text = raw.get("initial", "0")
    if not isinstance(initial_text, str):
        raise ValidationError("initial must be a formula string or random(seed, amplitude)")
    random_spec = parse_random_spec(initial_text)
    if random_spec is not None:
        initial_spec = ("random",) + random_spec
    else:
        initial_spec = ("formula", _field_formula(initial_text, coords, "initial"))

    boundary_values = None
    boundary_echo = {}
    if family == "disk":
        boundary_text = raw.get("boundary", "0")
        bform = _field_formula(boundary_text, ("theta", "θ"), "boundary")
        bvals = np.broadcast_to(
            np.asarray(bform.evaluate(_boundary_env(grid)), dtype=float), (grid.dims[1],))
        if not np.isfinite(bvals).all():
            raise ValidationError("boundary data evaluates to a non-finite value")
        boundary_values = np.array(bvals)
        boundary_echo = {"boundary": boundary_text}
    elif "boundary" in raw:
        raise ValidationError("boundary data only applies to disk fibers")

    method, t_max, opts, solver_echo = _parse_solver(raw.get("solver", {}), family)
    checks = _validate_checks(raw.get("checks", []), grid, warping, target)
    expect = raw.get("expect", "converged")
    if expect not in _EXPECTATIONS:
        raise ValidationError(f"expect must be one of {_EXPECTATIONS}, got {expect!r}")

    normalized = {
        "fiber": fiber_echo,
        "metric": metric_text,
        "warping": warping_text,
        "H_target": target_text,
        "initial": initial_text,
        **boundary_echo,
        "solver": solver_echo,
        "checks": list(checks),
        "expect": expect,
    }
    return ScenarioConfig(grid, metric, warping, target, initial_spec, boundary_values,
                          method, t_max, opts, checks, expect, normalized)


# --------------------------------------------------------------------------
# checks


def _check_tol_solve(opts: SolveOptions) -> float:
    return max(1e-8, 100.0 * opts.tol_abs)


def _run_check(name: str, wp: WarpedProduct, state: GraphState,
               config: ScenarioConfig) -> dict:
    tol_solve = _check_tol_solve(config.solver_opts)
    u, target = state.height, state.target
    try:
        if name == "quasi_isometry":
            lam_min, lam_max = quasi_isometry_constants(wp, u)
            _, _, grad_sq, _ = _tilt_pieces(wp, u)
            bound = 1.0 + float((wp.warping.values**2 * grad_sq).max())
            return {"lambda_min": lam_min, "lambda_max": lam_max, "upper_bound": bound,
                    "pass": lam_min >= 1.0 - 1e-12 and lam_max <= bound + 1e-10}
        if name == "ricci_sign":
            ric = radial_ricci(wp)
            rmin = float(ric.values.min())
            rmax = float(ric.values.max())
            if wp.warping_is_constant:
                ok = max(abs(rmin), abs(rmax)) <= _RICCI_ZERO_TOL
            else:
                ok = rmin < 0.0
            return {"ricci_min": rmin, "ricci_max": rmax, "pass": ok}
        if name == "compatibility":
            value = compatibility_integral(wp, u, target)
            threshold = obstruction_threshold(wp)
            if config.expect == "obstructed":
                ok = abs(value) > threshold
            else:
                ok = abs(value) <= threshold
            return {"compat_integral": value, "threshold": threshold, "pass": ok}
        if name == "height_identity":
            residual = check_height_identity(wp, u, target, tol_solve=tol_solve)
            sup = float(np.abs(residual.values[wp.fiber.interior_mask]).max())
            return {"height_identity_max_residual": sup,
                    "pass": sup <= _HEIGHT_IDENTITY_TOL}
        if name == "superharmonic":
            violation = check_superharmonic(wp, u, target, tol_solve=tol_solve,
                                            circle_nodes=_LIFT_CIRCLE_NODES)
            return {"max_violation": violation, "pass": violation <= _SUPERHARMONIC_TOL}
        # conformal_laplacian: probe the conformal rule on the lifted fiber
        # with the warping itself as test function and factor h^4.
        grid3, metric3, lift = lift_to_circle(wp.fiber, wp.metric, wp.warping,
                                              _LIFT_CIRCLE_NODES)
        h3 = lift(wp.warping)
        factor = ScalarField(grid3, h3.values**4)
        residual = check_conformal_laplacian(metric3, factor, h3)
        sup = float(np.abs(residual.values).max())
        return {"conformal_max_residual": sup, "pass": sup <= _CONFORMAL_CHECK_TOL}
    except PreconditionError as e:
        return {"precondition": str(e), "pass": False}


# --------------------------------------------------------------------------
# running


@dataclass
class RunReport:
    """Everything one scenario run produced, JSON-ready."""

    scenario: str | None
    config: dict
    solve: SolveReport
    graph: dict
    checks: dict
    expectation: dict
    refinements: list
    wall_time_s: float

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "config": self.config,
            "solve": self.solve.to_json_dict(),
            "graph": self.graph,
            "checks": self.checks,
            "expectation": self.expectation,
            "refinements": self.refinements,
            "wall_time_s": self.wall_time_s,
        }

    def exit_code(self) -> int:
        if self.solve.verdict in (Verdict.diverged, Verdict.max_iter):
            return 3
        if not self.expectation["matched"]:
            return 4
        if any(not c["pass"] for c in self.checks.values()):
            return 4
        return 0


def _solve_config(config: ScenarioConfig, seed_override: int | None):
    wp = WarpedProduct(config.grid, config.metric, config.warping)
    u0 = ScalarField(config.grid, config.initial_values(seed_override))
    if config.method == "flow":
        state, report = flow_solve(wp, config.target, u0, config.solver_opts,
                                   t_max=config.t_max)
    else:
        state, report = newton_solve(wp, config.target, u0, config.solver_opts)
    return wp, state, report


def _run_once(config: ScenarioConfig, seed_override: int | None) -> tuple[dict, SolveReport]:
    wp, state, solve_report = _solve_config(config, seed_override)
    _, _, angle = unit_normal(wp, state.height)
    graph = {"theta_min": angle.min, "theta_max": angle.max}
    checks = {name: _run_check(name, wp, state, config) for name in config.checks}
    observed = solve_report.verdict.value
    expectation = {"expected": config.expect, "observed": observed,
                   "matched": observed == config.expect}
    body = {"graph": graph, "checks": checks, "expectation": expectation,
            "state": state, "wp": wp}
    return body, solve_report


def _refined_config(config: ScenarioConfig, factor: int) -> ScenarioConfig:
    scaled = json.loads(config.echo_json())
    scaled["fiber"]["dims"] = [n * factor for n in scaled["fiber"]["dims"]]
    return parse_config(json.dumps(scaled))


def run_scenario(config: ScenarioConfig, *, scenario_name: str | None = None,
                 dump_dir=None, refine: int = 0, seed_override: int | None = None
                 ) -> RunReport:
    """Solve one scenario, run its checks, and assemble the report.

    ``refine`` adds companion runs with every axis doubled per level.
    ``seed_override`` replaces the seed of a ``random(...)`` initial field.
    ``dump_dir`` writes final height and residual fields as CSV.
    """
    start = time.perf_counter()
    body, solve_report = _run_once(config, seed_override)

    refinements = []
    for level in range(1, refine + 1):
        refined = _refined_config(config, 2**level)
        sub_body, sub_report = _run_once(refined, seed_override)
        refinements.append({
            "dims": refined.normalized["fiber"]["dims"],
            "solve": sub_report.to_json_dict(),
            "graph": sub_body["graph"],
            "checks": sub_body["checks"],
        })

    if dump_dir is not None:
        import os

        os.makedirs(dump_dir, exist_ok=True)
        state: GraphState = body["state"]
        dump_field_csv(state.height, os.path.join(dump_dir, "height.csv"))
        dump_field_csv(state.residual, os.path.join(dump_dir, "residual.csv"))

    wall = time.perf_counter() - start
    return RunReport(scenario_name, config.normalized, solve_report, body["graph"],
                     body["checks"], body["expectation"], refinements, wall)


# --------------------------------------------------------------------------
# bundled scenarios


BUILTIN_SCENARIOS: dict[str, dict] = {
    # Closed fiber, bounded non-constant warping, zero target curvature:
    # every start must settle to a constant height.
    "uniqueness_torus": {
        "fiber": {"kind": "torus", "dims": [64, 64]},
        "warping": "1+0.3*cos(x1)",
        "H_target": "0",
        "initial": "0.3*sin(x1)+0.1*cos(x2)",
        "checks": ["height_identity", "quasi_isometry", "compatibility", "superharmonic"],
        "expect": "converged",
    },
    # Constant warping with positive target curvature on a closed fiber:
    # the compatibility integral cannot vanish, so no graph exists.
    "obstruction_torus": {
        "fiber": {"kind": "torus", "dims": [64, 64]},
        "warping": "1",
        "H_target": "0.1",
        "initial": "0",
        "checks": ["compatibility", "ricci_sign"],
        "expect": "obstructed",
    },
    # Bounded non-constant minimal graph over the hyperbolic disk: the
    # closed-fiber uniqueness mechanism genuinely fails off parabolic fibers.
    "hyperbolic_counterexample": {
        "fiber": {"kind": "disk", "dims": [64, 128], "R": 0.875},
        "metric": "hyperbolic",
        "warping": "1",
        "H_target": "0",
        "initial": "0",
        "boundary": "0.5*sin(3*theta)",
        "checks": ["quasi_isometry", "height_identity"],
        "expect": "converged",
    },
    # Non-constant warping forces the vertical Ricci curvature negative
    # somewhere; the zero height is already an exact minimal graph here.
    "ricci_sign": {
        "fiber": {"kind": "torus", "dims": [48, 48]},
        "warping": "1+0.3*cos(x1)",
        "H_target": "0",
        "initial": "0",
        "checks": ["ricci_sign", "quasi_isometry", "compatibility"],
        "expect": "converged",
    },
    # One run exercising every check at once on a modest grid.
    "identities": {
        "fiber": {"kind": "torus", "dims": [32, 32]},
        "warping": "1+0.3*cos(x1)",
        "H_target": "0",
        "initial": "0.2*sin(x1)+0.1*cos(x2)",
        "checks": ["height_identity", "conformal_laplacian", "quasi_isometry",
                   "ricci_sign", "compatibility", "superharmonic"],
        "expect": "converged",
    },
}


def builtin_config(name: str) -> ScenarioConfig:
    if name not in BUILTIN_SCENARIOS:
        raise ValidationError(
            f"unknown scenario {name!r}; bundled: {', '.join(sorted(BUILTIN_SCENARIOS))}"
        )
    return parse_config(json.dumps(BUILTIN_SCENARIOS[name]))


# --------------------------------------------------------------------------
# verification suite


def _manufactured_state(n: int):
    """Exact discrete solution: fold the residual of a reference height
    into the target curvature, so the pair solves the equation to rounding."""
    grid, metric = build_torus((n, n))
    x1, x2 = grid.meshes()
    warping = ScalarField(grid, 1.0 + 0.3 * np.cos(x1))
    wp = WarpedProduct(grid, metric, warping)
    u = ScalarField(grid, 0.3 * np.sin(x1) + 0.2 * np.cos(x2))
    zero = ScalarField.constant(grid, 0.0)
    target = ScalarField(grid, mean_curvature_residual(wp, u, zero).values / wp.dimension)
    return wp, u, target


def _suite_operator_order() -> dict:
    errs = {}
    for n in (32, 64):
        grid, metric = build_torus((n, n))
        x1, x2 = grid.meshes()
        f = ScalarField(grid, np.sin(x1) + np.cos(2.0 * x2))
        grad = gradient(f, metric)
        exact_grad = np.stack([np.cos(x1), -2.0 * np.sin(2.0 * x2)], axis=-1)
        lap = laplace_beltrami(f, metric)
        exact_lap = -np.sin(x1) - 4.0 * np.cos(2.0 * x2)
        errs[n] = (float(np.abs(grad.components - exact_grad).max()),
                   float(np.abs(lap.values - exact_lap).max()))
    g_ratio = errs[32][0] / errs[64][0]
    l_ratio = errs[32][1] / errs[64][1]
    return {
        "suite": "operator_order",
        "values": {"gradient_error_32": errs[32][0], "gradient_error_64": errs[64][0],
                   "laplacian_error_32": errs[32][1], "laplacian_error_64": errs[64][1],
                   "gradient_ratio": g_ratio, "laplacian_ratio": l_ratio},
        "orders": {"gradient": math.log2(g_ratio), "laplacian": math.log2(l_ratio)},
        "pass": g_ratio >= 3.5 and l_ratio >= 3.5,
    }


def _suite_height_identity_order() -> dict:
    sups = {}
    for n in (32, 64):
        wp, u, target = _manufactured_state(n)
        residual = check_height_identity(wp, u, target, tol_solve=1e-8)
        sups[n] = float(np.abs(residual.values).max())
    order = math.log2(sups[32] / sups[64])
    return {
        "suite": "height_identity_order",
        "values": {"residual_32": sups[32], "residual_64": sups[64]},
        "orders": {"height_identity": order},
        "pass": 1.7 <= order <= 2.3,
    }


def _suite_conformal_order() -> dict:
    sups = {}
    for n in (16, 24):
        grid, metric = build_torus((n, n, n))
        x1, _, x3 = grid.meshes()
        # gentle amplitudes keep the coarse 16^3 residual under the 1e-3 gate
        h = ScalarField(grid, 1.0 + 0.05 * np.cos(x1))
        factor = ScalarField(grid, h.values**4)
        f = ScalarField(grid, 0.1 * np.sin(x1) + 0.05 * np.cos(x3))
        residual = check_conformal_laplacian(metric, factor, f)
        sups[n] = float(np.abs(residual.values).max())
    order = math.log(sups[16] / sups[24]) / math.log(24.0 / 16.0)
    return {
        "suite": "conformal_order",
        "values": {"residual_16": sups[16], "residual_24": sups[24]},
        "orders": {"conformal": order},
        "pass": sups[16] <= 1e-3 and 1.7 <= order <= 2.3,
    }


def _suite_ricci_sign() -> dict:
    grid, metric = build_torus((48, 48))
    x1, _ = grid.meshes()
    wp = WarpedProduct(grid, metric, ScalarField(grid, 1.0 + 0.3 * np.cos(x1)))
    ric = radial_ricci(wp).values
    wp_const = WarpedProduct(grid, metric, ScalarField.constant(grid, 2.0))
    ric_const = radial_ricci(wp_const).values
    ok = ric.min() < 0.0 < ric.max() and np.abs(ric_const).max() <= _RICCI_ZERO_TOL
    return {
        "suite": "ricci_sign",
        "values": {"ricci_min": float(ric.min()), "ricci_max": float(ric.max()),
                   "constant_warping_sup": float(np.abs(ric_const).max())},
        "orders": {},
        "pass": bool(ok),
    }


def _suite_quasi_isometry() -> dict:
    grid, metric = build_torus((32, 32))
    worst_low, worst_high = math.inf, -math.inf
    ok = True
    for seed in range(20):
        rng = np.random.Generator(np.random.PCG64(seed))
        u = ScalarField(grid, rng.uniform(-1.0, 1.0, grid.shape))
        h = ScalarField(grid, 0.5 + rng.uniform(0.0, 1.0, grid.shape))
        wp = WarpedProduct(grid, metric, h)
        lam_min, lam_max = quasi_isometry_constants(wp, u)
        _, _, grad_sq, _ = _tilt_pieces(wp, u)
        bound = 1.0 + float((h.values**2 * grad_sq).max())
        worst_low = min(worst_low, lam_min)
        worst_high = max(worst_high, lam_max - bound)
        ok = ok and lam_min >= 1.0 - 1e-12 and lam_max <= bound + 1e-10
    return {
        "suite": "quasi_isometry",
        "values": {"worst_lambda_min": worst_low, "worst_excess_over_bound": worst_high},
        "orders": {},
        "pass": bool(ok),
    }


def run_verification_suite() -> list[dict]:
    """Refinement studies for the core identities plus sign and bound checks."""
    return [
        _suite_operator_order(),
        _suite_height_identity_order(),
        _suite_conformal_order(),
        _suite_ricci_sign(),
        _suite_quasi_isometry(),
    ]
