"""Graph operators on warped products: residual, normals, identities."""

import math

import numpy as np
import pytest

from pmclab import (
    ConstructionError,
    GridMismatchError,
    PreconditionError,
    ScalarField,
    SolveOptions,
    WarpedProduct,
    build_polar_disk,
    build_torus,
    check_conformal_laplacian,
    check_height_identity,
    check_superharmonic,
    compatibility_integral,
    conformal_scale,
    induced_metric,
    mean_curvature_residual,
    newton_solve,
    obstruction_witness,
    quasi_isometry_constants,
    unit_normal,
)


def _torus_product(n=32, amplitude=0.3):
    grid, metric = build_torus((n, n))
    x1, _ = grid.meshes()
    warping = ScalarField(grid, 1.0 + amplitude * np.cos(x1))
    return WarpedProduct(grid, metric, warping)


def _manufactured(n):
    """Reference height whose own residual is folded into the target, so
    the pair is an exact discrete solution."""
    wp = _torus_product(n)
    x1, x2 = wp.fiber.meshes()
    u = ScalarField(wp.fiber, 0.3 * np.sin(x1) + 0.2 * np.cos(x2))
    zero = ScalarField.constant(wp.fiber, 0.0)
    target = ScalarField(
        wp.fiber, mean_curvature_residual(wp, u, zero).values / wp.dimension)
    return wp, u, target


# ---------------------------------------------------------------------------
# construction


def test_warping_must_be_positive_and_error_names_node():
    grid, metric = build_torus((8, 8))
    vals = np.ones(grid.shape)
    vals[2, 6] = -0.5
    with pytest.raises(ConstructionError, match=r"2.*6"):
        WarpedProduct(grid, metric, ScalarField(grid, vals))


def test_warping_bounds_and_constancy():
    wp = _torus_product(16)
    assert wp.h_inf == pytest.approx(0.7)
    assert wp.h_sup == pytest.approx(1.3)
    assert not wp.warping_is_constant
    assert wp.dimension == 2

    grid, metric = build_torus((8, 8))
    const = WarpedProduct(grid, metric, ScalarField.constant(grid, 2.0))
    assert const.warping_is_constant


# ---------------------------------------------------------------------------
# the prescribed-curvature residual


def test_residual_is_translation_invariant():
    wp = _torus_product()
    x1, x2 = wp.fiber.meshes()
    u = ScalarField(wp.fiber, 0.4 * np.sin(x1 + 0.3) * np.cos(x2))
    zero = ScalarField.constant(wp.fiber, 0.0)
    shifted = ScalarField(wp.fiber, u.values + 17.25)
    base = mean_curvature_residual(wp, u, zero).values
    moved = mean_curvature_residual(wp, shifted, zero).values
    np.testing.assert_allclose(moved, base, atol=1e-13)


def test_manufactured_pair_solves_exactly():
    wp, u, target = _manufactured(32)
    residual = mean_curvature_residual(wp, u, target)
    assert np.abs(residual.values).max() <= 1e-14


def test_scherk_patch_residual_refines():
    # ln(cos x / cos y) solves the minimal equation on the plane; on the
    # flat disk the interior residual is pure discretization error.  The
    # outermost interior ring feels the one-sided boundary stencil at
    # first order, the core refines at second order.
    sups = {}
    cores = {}
    for n_r, n_t in ((32, 64), (64, 128)):
        grid, metric = build_polar_disk(n_r, n_t, radius=1.2)
        rho, theta = grid.meshes()
        x = rho * np.cos(theta)
        y = rho * np.sin(theta)
        u = ScalarField(grid, np.log(np.cos(x) / np.cos(y)))
        wp = WarpedProduct(grid, metric, ScalarField.constant(grid, 1.0))
        zero = ScalarField.constant(grid, 0.0)
        res = np.abs(mean_curvature_residual(wp, u, zero).values)
        res = np.where(grid.interior_mask, res, 0.0)
        sups[n_r] = res.max()
        cores[n_r] = res[: n_r - 2].max()
    assert sups[32] == pytest.approx(2.557e-2, rel=1e-2)
    assert cores[32] / cores[64] > 3.5
    assert sups[32] / sups[64] > 2.0


# ---------------------------------------------------------------------------
# normals and the induced metric


def test_unit_normal_identities():
    wp = _torus_product()
    x1, x2 = wp.fiber.meshes()
    u = ScalarField(wp.fiber, 0.5 * np.sin(x1) + 0.2 * np.cos(2.0 * x2))
    fiber_part, vertical, angle = unit_normal(wp, u)
    h = wp.warping.values

    # unit length: sigma(F,F) + h^2 v^2 = 1
    sq = np.einsum("...ij,...i,...j->...",
                   wp.metric.mat, fiber_part.components, fiber_part.components)
    np.testing.assert_allclose(sq + h**2 * vertical.values**2, 1.0, atol=1e-12)

    # angle function times area factor recovers the warping
    w_factor = 1.0 / (h * vertical.values)
    np.testing.assert_allclose(angle.values * w_factor, h, atol=1e-12)
    assert 0.0 < angle.min <= angle.max <= 1.3 + 1e-12


def test_induced_metric_determinant_is_rank_one_update():
    wp = _torus_product()
    x1, x2 = wp.fiber.meshes()
    u = ScalarField(wp.fiber, 0.4 * np.sin(x1) * np.sin(x2))
    prime = induced_metric(wp, u)
    _, vertical, _ = unit_normal(wp, u)
    w_sq = 1.0 / (wp.warping.values * vertical.values) ** 2
    np.testing.assert_allclose(
        prime.sqrt_det**2, wp.metric.sqrt_det**2 * w_sq, rtol=1e-12)


def test_quasi_isometry_bounds_random_pairs():
    grid, metric = build_torus((24, 24))
    x1, x2 = grid.meshes()
    rng = np.random.default_rng(40)
    from pmclab import gradient, norm_sq

    for _ in range(20):
        a, b, c = rng.uniform(-0.6, 0.6, size=3)
        u = ScalarField(grid, a * np.sin(x1) + b * np.cos(x2) + c * np.sin(x1 + x2))
        h = ScalarField(grid, 1.0 + 0.4 * rng.uniform() * np.cos(x1))
        wp = WarpedProduct(grid, metric, h)
        lam_min, lam_max = quasi_isometry_constants(wp, u)
        tilt = h.values**2 * norm_sq(gradient(u, metric), metric).values
        assert lam_min >= 1.0 - 1e-12
        assert lam_max <= 1.0 + tilt.max() + 1e-10


def test_quasi_isometry_tight_for_level_height():
    wp = _torus_product()
    lam_min, lam_max = quasi_isometry_constants(
        wp, ScalarField.constant(wp.fiber, 4.0))
    assert lam_min == pytest.approx(1.0, abs=1e-13)
    assert lam_max == pytest.approx(1.0, abs=1e-13)


# ---------------------------------------------------------------------------
# conformal rescaling


def test_conformal_scale_requires_positive_factor():
    grid, metric = build_torus((8, 8))
    vals = np.ones(grid.shape)
    vals[1, 2] = 0.0
    with pytest.raises(ConstructionError, match=r"1.*2"):
        conformal_scale(metric, ScalarField(grid, vals))


def test_conformal_laplacian_identity_unit_factor():
    grid, metric = build_torus((12, 12, 12))
    x1, _, x3 = grid.meshes()
    f = ScalarField(grid, np.sin(x1) + 0.5 * np.cos(x3))
    one = ScalarField.constant(grid, 1.0)
    residual = check_conformal_laplacian(metric, one, f)
    assert np.abs(residual.values).max() <= 1e-13


def test_conformal_laplacian_identity_constant_function():
    grid, metric = build_torus((12, 12, 12))
    x1, _, _ = grid.meshes()
    factor = ScalarField(grid, (1.0 + 0.2 * np.cos(x1)) ** 4)
    f = ScalarField.constant(grid, 2.0)
    residual = check_conformal_laplacian(metric, factor, f)
    assert np.abs(residual.values).max() == 0.0


def test_conformal_laplacian_refines_at_second_order():
    sups = {}
    for n in (16, 24):
        grid, metric = build_torus((n, n, n))
        x1, _, x3 = grid.meshes()
        h = 1.0 + 0.3 * np.cos(x1)
        factor = ScalarField(grid, h**4)
        f = ScalarField(grid, np.sin(x1) + 0.5 * np.cos(x3))
        residual = check_conformal_laplacian(metric, factor, f)
        sups[n] = np.abs(residual.values).max()
    order = math.log(sups[16] / sups[24]) / math.log(24.0 / 16.0)
    assert order == pytest.approx(2.0, abs=0.3)


def test_conformal_laplacian_needs_three_dimensions():
    grid, metric = build_torus((12, 12))
    one = ScalarField.constant(grid, 1.0)
    with pytest.raises(PreconditionError, match="lift"):
        check_conformal_laplacian(metric, one, one)


# ---------------------------------------------------------------------------
# solved-state identities


def test_height_identity_refines_at_second_order():
    sups = {}
    for n in (32, 64):
        wp, u, target = _manufactured(n)
        residual = check_height_identity(wp, u, target, tol_solve=1e-8)
        sups[n] = np.abs(residual.values).max()
    assert sups[32] == pytest.approx(1.667e-3, rel=1e-2)
    order = math.log2(sups[32] / sups[64])
    assert 1.7 <= order <= 2.3


def test_height_identity_constant_warping_collapses_to_scaled_residual():
    # with level warping the identity is algebraically the equation
    # residual divided by the area factor, node for node
    grid, metric = build_polar_disk(24, 48, radius=1.2)
    rho, theta = grid.meshes()
    x = rho * np.cos(theta)
    y = rho * np.sin(theta)
    u = ScalarField(grid, np.log(np.cos(x) / np.cos(y)))
    wp = WarpedProduct(grid, metric, ScalarField.constant(grid, 1.0))
    zero = ScalarField.constant(grid, 0.0)
    equation = mean_curvature_residual(wp, u, zero)
    identity = check_height_identity(wp, u, zero, tol_solve=1.0)
    from pmclab import gradient, norm_sq
    w = np.sqrt(1.0 + norm_sq(gradient(u, metric), metric).values)
    np.testing.assert_allclose(identity.values, equation.values / w, atol=1e-12)


def test_height_identity_rejects_unsolved_height():
    wp = _torus_product()
    x1, _ = wp.fiber.meshes()
    u = ScalarField(wp.fiber, np.sin(x1))
    zero = ScalarField.constant(wp.fiber, 0.0)
    with pytest.raises(PreconditionError, match="tol_solve"):
        check_height_identity(wp, u, zero, tol_solve=1e-10)


def test_superharmonic_level_height_is_zero():
    wp = _torus_product()
    u = ScalarField.constant(wp.fiber, 0.75)
    zero = ScalarField.constant(wp.fiber, 0.0)
    assert abs(check_superharmonic(wp, u, zero)) <= 1e-12


def test_superharmonic_solved_dirichlet_cap():
    grid, metric = build_polar_disk(64, 64, radius=1.0)
    wp = WarpedProduct(grid, metric, ScalarField.constant(grid, 1.0))
    target = ScalarField.constant(grid, -0.05)
    start = ScalarField.constant(grid, 0.0)
    state, report = newton_solve(wp, target, start, SolveOptions())
    assert report.verdict == "converged"
    violation = check_superharmonic(wp, state.height, target, tol_solve=1e-6)
    assert violation <= 1e-6


def test_superharmonic_rejects_positive_curvature():
    wp = _torus_product()
    u = ScalarField.constant(wp.fiber, 0.0)
    vals = np.full(wp.fiber.shape, -0.1)
    vals[4, 7] = 0.2
    with pytest.raises(PreconditionError, match=r"4.*7"):
        check_superharmonic(wp, u, ScalarField(wp.fiber, vals))


def test_superharmonic_disk_needs_level_warping():
    grid, metric = build_polar_disk(16, 32, radius=1.0)
    rho, _ = grid.meshes()
    wp = WarpedProduct(grid, metric, ScalarField(grid, 1.0 + 0.1 * rho))
    u = ScalarField.constant(grid, 0.0)
    zero = ScalarField.constant(grid, 0.0)
    with pytest.raises(PreconditionError, match="constant"):
        check_superharmonic(wp, u, zero)


# ---------------------------------------------------------------------------
# the closed-fiber compatibility integral


def test_compatibility_integral_vanishes_on_solvable_data():
    wp, u, target = _manufactured(32)
    assert abs(compatibility_integral(wp, u, target)) <= 1e-9


def test_compatibility_integral_witnesses_level_obstruction():
    grid, metric = build_torus((32, 32))
    wp = WarpedProduct(grid, metric, ScalarField.constant(grid, 1.0))
    u = ScalarField.constant(grid, 0.0)
    target = ScalarField.constant(grid, 0.1)
    value = compatibility_integral(wp, u, target)
    assert value == pytest.approx(-0.8 * math.pi**2, abs=1e-12)


def test_compatibility_integral_needs_closed_fiber():
    grid, metric = build_polar_disk(16, 32, radius=1.0)
    wp = WarpedProduct(grid, metric, ScalarField.constant(grid, 1.0))
    u = ScalarField.constant(grid, 0.0)
    with pytest.raises(GridMismatchError):
        compatibility_integral(wp, u, u)


def test_obstruction_witness_only_for_level_warping():
    grid, metric = build_torus((16, 16))
    level = WarpedProduct(grid, metric, ScalarField.constant(grid, 1.0))
    target = ScalarField.constant(grid, 0.1)
    witness = obstruction_witness(level, target)
    assert witness == pytest.approx(-0.8 * math.pi**2, abs=1e-12)

    varying = _torus_product(16)
    assert obstruction_witness(varying, target) is None
