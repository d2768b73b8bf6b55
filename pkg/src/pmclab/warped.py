"""Graphs over a warped-product fiber and their curvature diagnostics.

A product ``P x_h R`` pairs a closed or Dirichlet fiber ``(P, sigma)``
with a positive warping ``h`` on ``P``; the product metric is
``sigma + h^2 dr^2``.  A graph is the slice ``r = u`` of a height function
``u`` on ``P``.  Everything here reduces to fiber calculus:

* tilt factor ``W = sqrt(1 + h^2 |grad u|^2)``,
* prescribed-curvature residual
  ``div(h grad u / W) + sigma(grad h, grad u)/W - n H``,
* downward unit normal split into fiber part ``-(h/W) grad u`` and
  vertical component ``1/(h W)``; the angle function is ``h/W``,
* induced graph metric ``sigma + h^2 du (x) du`` (a rank-one update),
* the vertical Ricci curvature ``-h Lap h`` of the product,
* the closed-fiber compatibility integral whose non-vanishing certifies
  that no exact graph with the requested curvature exists.

Identity checks (height-function identity, conformally scaled Laplacian,
superharmonicity of a solved height) are exposed as residual fields so
their convergence under refinement can be measured.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .geometry import (
    ConstructionError,
    FiberGrid,
    GridKind,
    GridMismatchError,
    MetricField,
    ScalarField,
    VectorField,
    coordinate_partials,
    divergence,
    integrate,
    laplace_beltrami,
    lift_to_circle,
)


class PreconditionError(ValueError):
    """Raised when a check is invoked on a state outside its contract."""


class WarpedProduct:
    """A fiber grid, its metric, and a positive warping function."""

    __slots__ = ("fiber", "metric", "warping", "h_inf", "h_sup")

    def __init__(self, fiber: FiberGrid, metric: MetricField, warping: ScalarField) -> None:
        metric.grid.require_same(fiber, "warped product")
        fiber.require_same(warping.grid, "warped product")
        h = warping.values
        if h.min() <= 0.0:
            bad = np.argwhere(h <= 0.0)[0]
            raise ConstructionError(
                f"warping must stay positive, offending node {tuple(int(i) for i in bad)}"
            )
        self.fiber = fiber
        self.metric = metric
        self.warping = warping
        self.h_inf = float(h.min())
        self.h_sup = float(h.max())

    @property
    def dimension(self) -> int:
        """Fiber dimension, the ``n`` in the prescribed-curvature equation."""
        return self.fiber.ndim

    @property
    def warping_is_constant(self) -> bool:
        return (self.h_sup - self.h_inf) <= 1e-12 * self.h_sup


def _tilt_pieces(wp: WarpedProduct, u: ScalarField):
    """Shared kernel: partials, contravariant gradient, |grad u|^2, W."""
    wp.fiber.require_same(u.grid, "graph height")
    du = coordinate_partials(u)
    gu = np.einsum("...ij,...j->...i", wp.metric.inv, du)
    grad_sq = np.maximum(np.einsum("...i,...i->...", du, gu), 0.0)
    h = wp.warping.values
    W = np.sqrt(1.0 + h**2 * grad_sq)
    return du, gu, grad_sq, W


def mean_curvature_residual(wp: WarpedProduct, u: ScalarField,
                            target_curvature: ScalarField) -> ScalarField:
    """Residual of the prescribed-mean-curvature equation at every node.

    Zero (on the unknowns) means the graph of ``u`` has mean curvature
    ``target_curvature`` with respect to the downward normal.  Constant
    shifts of ``u`` leave the residual unchanged; on a disk the pinned
    ring is evaluated too but is never an unknown.
    """
    wp.fiber.require_same(target_curvature.grid, "target curvature")
    du, gu, grad_sq, W = _tilt_pieces(wp, u)
    h = wp.warping.values
    flux = VectorField(wp.fiber, (h / W)[..., None] * gu)
    div = divergence(flux, wp.metric).values
    dh = coordinate_partials(wp.warping)
    drift = np.einsum("...i,...i->...", dh, gu) / W
    n = wp.dimension
    return ScalarField(wp.fiber, div + drift - n * target_curvature.values)


class GraphState:
    """A height function together with its derived graph quantities."""

    __slots__ = ("warped", "height", "area_factor", "residual", "target", "grad_sup")

    def __init__(self, warped: WarpedProduct, height: ScalarField,
                 target: ScalarField) -> None:
        du, gu, grad_sq, W = _tilt_pieces(warped, height)
        self.warped = warped
        self.height = height
        self.target = target
        self.area_factor = ScalarField(warped.fiber, W)
        self.residual = mean_curvature_residual(warped, height, target)
        self.grad_sup = float(np.sqrt(grad_sq.max()))

    def interior_residual_sup(self) -> float:
        mask = self.warped.fiber.interior_mask
        return float(np.abs(self.residual.values[mask]).max())


class AngleFunction:
    """Pairing of the graph's unit normal with the vertical direction: ``h / W``."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: FiberGrid, values: NDArray[np.float64]) -> None:
        field = ScalarField(grid, values)
        self.grid = grid
        self.values = field.values

    @property
    def min(self) -> float:
        return float(self.values.min())

    @property
    def max(self) -> float:
        return float(self.values.max())


def unit_normal(wp: WarpedProduct, u: ScalarField
                ) -> tuple[VectorField, ScalarField, AngleFunction]:
    """Downward unit normal of the graph.

    Returns the fiber part ``-(h/W) grad u`` (contravariant), the vertical
    component ``1/(h W)``, and the angle function ``h/W``.  The product
    metric makes these unit length: ``sigma(fp, fp) + h^2 vc^2 = 1``.
    """
    du, gu, grad_sq, W = _tilt_pieces(wp, u)
    h = wp.warping.values
    fiber_part = VectorField(wp.fiber, (-h / W)[..., None] * gu)
    vertical = ScalarField(wp.fiber, 1.0 / (h * W))
    angle = AngleFunction(wp.fiber, h / W)
    return fiber_part, vertical, angle


def induced_metric(wp: WarpedProduct, u: ScalarField) -> MetricField:
    """Graph metric ``sigma_ij + h^2 (d_i u)(d_j u)`` on the fiber chart."""
    du, _, _, _ = _tilt_pieces(wp, u)
    h2 = wp.warping.values**2
    mat = wp.metric.mat + h2[..., None, None] * (du[..., :, None] * du[..., None, :])
    return MetricField(wp.fiber, mat)


def quasi_isometry_constants(wp: WarpedProduct, u: ScalarField) -> tuple[float, float]:
    """Global eigenvalue range of the graph metric measured against sigma.

    Solved by a batched Cholesky reduction to an ordinary symmetric
    eigenproblem, not by the closed-form rank-one spectrum, so the pinch
    ``1 <= lambda <= 1 + sup(h |grad u|)^2`` is an independent cross-check.
    """
    prime = induced_metric(wp, u)
    L = np.linalg.cholesky(wp.metric.mat)
    T = np.linalg.solve(L, prime.mat)
    A = np.linalg.solve(L, np.swapaxes(T, -1, -2))
    eigs = np.linalg.eigvalsh(A)
    return float(eigs.min()), float(eigs.max())


def conformal_scale(metric: MetricField, factor: ScalarField) -> MetricField:
    """Scale a metric node-wise by a positive conformal factor."""
    metric.grid.require_same(factor.grid, "conformal_scale")
    if factor.values.min() <= 0.0:
        bad = np.argwhere(factor.values <= 0.0)[0]
        raise ConstructionError(
            f"conformal factor must stay positive, offending node {tuple(int(i) for i in bad)}"
        )
    return MetricField(metric.grid, factor.values[..., None, None] * metric.mat)


def check_conformal_laplacian(metric: MetricField, factor: ScalarField,
                              f: ScalarField) -> ScalarField:
    """Residual of the conformal-change rule for the Laplace-Beltrami operator.

    For a metric scaled by ``phi`` in dimension ``d >= 3`` the scaled
    Laplacian of ``f`` equals
    ``(Lap f + ((d-2)/2) sigma(grad f, grad ln phi)) / phi``.  The returned
    field is the difference of the two discretizations; it shrinks at
    second order for smooth data.
    """
    grid = metric.grid
    if grid.ndim < 3:
        raise PreconditionError(
            "the conformal-change rule is dimension sensitive; lift a 2-D fiber "
            "to its circle cross product first (dimension must be >= 3)"
        )
    grid.require_same(factor.grid, "check_conformal_laplacian")
    grid.require_same(f.grid, "check_conformal_laplacian")
    scaled = conformal_scale(metric, factor)
    lhs = laplace_beltrami(f, scaled).values
    log_factor = ScalarField(grid, np.log(factor.values))
    df = coordinate_partials(f)
    dlog = coordinate_partials(log_factor)
    cross = np.einsum("...ij,...i,...j->...", metric.inv, df, dlog)
    d = grid.ndim
    rhs = (laplace_beltrami(f, metric).values + 0.5 * (d - 2) * cross) / factor.values
    return ScalarField(grid, lhs - rhs)


def _require_solved(wp: WarpedProduct, u: ScalarField, target: ScalarField,
                    tol_solve: float, what: str) -> None:
    state = GraphState(wp, u, target)
    sup = state.interior_residual_sup()
    if sup > tol_solve:
        raise PreconditionError(
            f"{what} expects a solved height: residual sup {sup:.3e} exceeds "
            f"tol_solve {tol_solve:.3e}"
        )


def check_height_identity(wp: WarpedProduct, u: ScalarField, target_curvature: ScalarField,
                          tol_solve: float = 1e-8) -> ScalarField:
    """Residual of the solved-graph height identity.

    On a graph with mean curvature ``H`` the height satisfies, in the
    induced metric, ``Lap u + 2 <grad u, grad ln h> = n H / (h W)``.  The
    caller must hand in an approximately solved height (interior residual
    below ``tol_solve``); the returned field converges to zero at second
    order as the grid refines.
    """
    _require_solved(wp, u, target_curvature, tol_solve, "height identity")
    prime = induced_metric(wp, u)
    log_h = ScalarField(wp.fiber, np.log(wp.warping.values))
    du = coordinate_partials(u)
    dlog = coordinate_partials(log_h)
    cross = np.einsum("...ij,...i,...j->...", prime.inv, du, dlog)
    lap = laplace_beltrami(u, prime).values
    _, _, _, W = _tilt_pieces(wp, u)
    # vertical component of the unit normal, NOT the angle function h/W:
    # the h^2 from g(d_r, d_r) cancels against the 1/h^2 in grad tau.
    vertical = 1.0 / (wp.warping.values * W)
    n = wp.dimension
    vals = lap + 2.0 * cross - n * target_curvature.values * vertical
    return ScalarField(wp.fiber, vals)


def check_superharmonic(wp: WarpedProduct, u: ScalarField, target_curvature: ScalarField,
                        tol_solve: float = 1e-8, circle_nodes: int = 16) -> float:
    """Largest value of the conformally scaled graph Laplacian of the height.

    For a solved graph with ``target_curvature <= 0`` the height is
    superharmonic in the induced metric scaled by ``h^4`` (after crossing
    with a circle to reach dimension 3), so the returned maximum should
    not exceed the discretization tolerance.

    Torus fibers are lifted with ``circle_nodes`` nodes on the circle.
    Dirichlet fibers are handled in two dimensions and therefore require a
    constant warping, for which the conformal factor is a harmless global
    constant; the maximum is then taken over interior nodes only.
    """
    if np.any(target_curvature.values > 0.0):
        bad = np.argwhere(target_curvature.values > 0.0)[0]
        raise PreconditionError(
            "superharmonicity of the height needs target curvature <= 0; "
            f"positive value at node {tuple(int(i) for i in bad)}"
        )
    _require_solved(wp, u, target_curvature, tol_solve, "superharmonic check")
    prime = induced_metric(wp, u)
    if wp.fiber.kind is GridKind.torus2d:
        grid3, prime3, lift = lift_to_circle(wp.fiber, prime, wp.warping, circle_nodes)
        h3 = lift(wp.warping)
        factor = ScalarField(grid3, h3.values**4)
        scaled = conformal_scale(prime3, factor)
        lap = laplace_beltrami(lift(u), scaled).values
        return float(lap.max())
    if wp.fiber.kind is GridKind.disk_polar:
        if not wp.warping_is_constant:
            raise PreconditionError(
                "on a Dirichlet fiber the check stays two-dimensional and "
                "needs a constant warping (no circle lift for disks)"
            )
        factor = ScalarField(wp.fiber, np.full(wp.fiber.shape, wp.h_sup**4))
        scaled = conformal_scale(prime, factor)
        lap = laplace_beltrami(u, scaled).values
        return float(lap[wp.fiber.interior_mask].max())
    raise PreconditionError(
        f"superharmonic check supports 2-D fibers, got {wp.fiber.kind.value}"
    )


def radial_ricci(wp: WarpedProduct) -> ScalarField:
    """Vertical Ricci curvature ``Ric(d_r, d_r) = -h Lap_sigma h`` of the product.

    A non-constant warping on a closed fiber forces this to take negative
    values somewhere, since ``Lap h`` integrates to zero.
    """
    lap_h = laplace_beltrami(wp.warping, wp.metric).values
    return ScalarField(wp.fiber, -wp.warping.values * lap_h)


def compatibility_integral(wp: WarpedProduct, u: ScalarField,
                           target_curvature: ScalarField) -> float:
    """Closed-fiber integral of ``sigma(grad h, grad u)/W - n H``.

    Exact graphs with curvature ``H`` make this vanish (the divergence
    part integrates away), so a value bounded from zero is a
    non-existence witness.  With constant warping the drift term is
    identically zero and the witness reduces to ``-n * integral(H)`` for
    any height.
    """
    if not wp.fiber.closed:
        raise GridMismatchError(
            "the compatibility witness integrates over a closed fiber; "
            "Dirichlet disks have boundary flux instead"
        )
    wp.fiber.require_same(target_curvature.grid, "target curvature")
    du, gu, grad_sq, W = _tilt_pieces(wp, u)
    dh = coordinate_partials(wp.warping)
    drift = np.einsum("...i,...i->...", dh, gu) / W
    n = wp.dimension
    field = ScalarField(wp.fiber, drift - n * target_curvature.values)
    return integrate(field, wp.metric)


def obstruction_witness(wp: WarpedProduct, target_curvature: ScalarField) -> float | None:
    """Pre-iteration non-existence witness for constant warping on a closed fiber.

    Returns ``-n * integral(H)`` when the fiber is closed and the warping
    constant (the drift term then vanishes for every height), else None.
    """
    if not wp.fiber.closed or not wp.warping_is_constant:
        return None
    n = wp.dimension
    return -n * integrate(target_curvature, wp.metric)


def obstruction_threshold(wp: WarpedProduct) -> float:
    """Scale below which a compatibility witness is treated as zero."""
    vol = volume_of(wp)
    return 1e-9 * max(1.0, wp.dimension * vol)


def volume_of(wp: WarpedProduct) -> float:
    return integrate(ScalarField.constant(wp.fiber, 1.0), wp.metric)
