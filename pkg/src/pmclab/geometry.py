"""Metric-aware finite differences on structured fiber grids.

Two grid families are supported: uniform periodic tori (2-D, plus a 3-D
variant obtained by crossing a 2-D torus with a circle) and polar disks
with cell-centered radial rings and a pinned (Dirichlet) outer ring.

All first derivatives are second order:

* centered differences on periodic axes and in the radial interior,
* a three-point one-sided stencil on the pinned outer ring,
* an across-center pairing on the innermost ring of a disk: the radial
  neighbour of node ``(r0, theta)`` at ``r = -dr/2`` is the node
  ``(r0, theta + pi)``.  Radial fluxes are extended through the center
  with a signed area density, which makes the paired value enter with a
  plus sign for scalars and fluxes alike and keeps the stencil second
  order at the axis.  This requires an even angular node count.

The divergence is assembled in flux form: the density ``sqrt(det sigma)
X^i`` is averaged onto faces and differenced, so the volume integral of a
divergence telescopes to zero on fully periodic grids up to rounding.
Integration uses exact (fsum) accumulation in a fixed traversal order, so
repeated runs are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable

import numpy as np
from numpy.typing import NDArray


class GridMismatchError(ValueError):
    """Raised when fields or metrics from different grids are combined."""


class ConstructionError(ValueError):
    """Raised when a grid, metric, or field violates a structural precondition."""


class ModelDomainError(ValueError):
    """Raised when a request leaves the validity region of a model geometry."""


class GridKind(str, Enum):
    torus2d = "torus2d"
    disk_polar = "disk_polar"
    torus3d_lifted = "torus3d_lifted"


class BoundaryKind(str, Enum):
    periodic_all = "periodic_all"
    dirichlet_radial = "dirichlet_radial"


_MIN_NODES_PER_AXIS = 8


@dataclass(frozen=True)
class FiberGrid:
    """Structured node layout of a fiber manifold chart.

    Parameters
    ----------
    kind:
        Grid family.  Tori use coordinates ``x1, x2 (, x3)`` with node
        ``i`` at ``i * extent / n``; disks use cell-centered radii
        ``r_i = (i + 1/2) * R / n_r`` and angles ``theta_j = j * 2pi / n_theta``.
    dims:
        Nodes per axis, each at least 8.
    extents:
        Coordinate extent per axis.  For disks this is ``(R, 2pi)``.
    boundary:
        ``periodic_all`` for tori, ``dirichlet_radial`` for disks (the
        outermost radial ring holds pinned data and is never an unknown).
    """

    kind: GridKind
    dims: tuple[int, ...]
    extents: tuple[float, ...]
    boundary: BoundaryKind

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "extents", tuple(float(e) for e in self.extents))
        expected = {GridKind.torus2d: 2, GridKind.disk_polar: 2, GridKind.torus3d_lifted: 3}
        if len(self.dims) != expected[self.kind]:
            raise ConstructionError(
                f"{self.kind.value} grid needs {expected[self.kind]} axes, got dims {self.dims}"
            )
        if len(self.extents) != len(self.dims):
            raise ConstructionError(
                f"extents {self.extents} do not match dims {self.dims}"
            )
        for n in self.dims:
            if n < _MIN_NODES_PER_AXIS:
                raise ConstructionError(
                    f"need at least {_MIN_NODES_PER_AXIS} nodes per axis, got {n}"
                )
        for e in self.extents:
            if not math.isfinite(e) or e <= 0.0:
                raise ConstructionError(f"axis extents must be positive, got {e}")
        if self.kind is GridKind.disk_polar:
            if self.boundary is not BoundaryKind.dirichlet_radial:
                raise ConstructionError("disk grids carry a Dirichlet outer ring")
            if self.dims[1] % 2 != 0:
                raise ConstructionError(
                    f"the across-center pairing needs an even angular count, got {self.dims[1]}"
                )
        elif self.boundary is not BoundaryKind.periodic_all:
            raise ConstructionError("torus grids are periodic on every axis")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.dims

    @property
    def periodic_axes(self) -> tuple[bool, ...]:
        if self.kind is GridKind.disk_polar:
            return (False, True)
        return (True,) * self.ndim

    @property
    def closed(self) -> bool:
        """True when the grid has no boundary (every axis periodic)."""
        return self.boundary is BoundaryKind.periodic_all

    @cached_property
    def spacings(self) -> tuple[float, ...]:
        return tuple(e / n for e, n in zip(self.extents, self.dims))

    @cached_property
    def cell_volume(self) -> float:
        return math.prod(self.spacings)

    @cached_property
    def axes(self) -> tuple[NDArray[np.float64], ...]:
        out = []
        for ax, (n, d) in enumerate(zip(self.dims, self.spacings)):
            if self.kind is GridKind.disk_polar and ax == 0:
                out.append((np.arange(n) + 0.5) * d)
            else:
                out.append(np.arange(n) * d)
        for arr in out:
            arr.setflags(write=False)
        return tuple(out)

    def meshes(self) -> tuple[NDArray[np.float64], ...]:
        """Node coordinate arrays of full grid shape, one per axis."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def interior_mask(self) -> NDArray[np.bool_]:
        """True at unknown nodes; False on the pinned ring of a disk."""
        mask = np.ones(self.shape, dtype=bool)
        if self.kind is GridKind.disk_polar:
            mask[-1, :] = False
        mask.setflags(write=False)
        return mask

    def require_same(self, other: "FiberGrid", what: str) -> None:
        if self is not other and self != other:
            raise GridMismatchError(f"{what}: grids differ ({self.kind.value} {self.dims} "
                                    f"vs {other.kind.value} {other.dims})")


class ScalarField:
    """Node values of a real function on a :class:`FiberGrid`."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: FiberGrid, values: NDArray) -> None:
        vals = np.asarray(values, dtype=np.float64)
        if vals.shape != grid.shape:
            raise ConstructionError(
                f"scalar field shape {vals.shape} does not match grid {grid.shape}"
            )
        if not np.isfinite(vals).all():
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise ConstructionError(
                "scalar field contains a non-finite value at node "
                f"{tuple(int(i) for i in bad)}"
            )
        vals = vals.copy()
        vals.setflags(write=False)
        self.grid = grid
        self.values = vals

    @classmethod
    def constant(cls, grid: FiberGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: FiberGrid, fn: Callable[..., NDArray]) -> "ScalarField":
        return cls(grid, np.broadcast_to(np.asarray(fn(*grid.meshes()), dtype=float), grid.shape))


class VectorField:
    """Contravariant components of a vector field, last axis indexes the component."""

    __slots__ = ("grid", "components")

    def __init__(self, grid: FiberGrid, components: NDArray) -> None:
        comps = np.asarray(components, dtype=np.float64)
        if comps.shape != grid.shape + (grid.ndim,):
            raise ConstructionError(
                f"vector field shape {comps.shape} does not match grid "
                f"{grid.shape} + ({grid.ndim},)"
            )
        if not np.isfinite(comps).all():
            raise ConstructionError("vector field contains non-finite values")
        comps = comps.copy()
        comps.setflags(write=False)
        self.grid = grid
        self.components = comps


class MetricField:
    """Node-wise symmetric positive-definite metric with cached derived data.

    ``mat[..., i, j]`` holds sigma_ij; ``inv`` is the contravariant metric
    and ``sqrt_det`` the area/volume density, both computed directly from
    ``mat`` so they agree with it to machine precision.
    """

    __slots__ = ("grid", "mat", "sqrt_det", "inv")

    def __init__(self, grid: FiberGrid, mat: NDArray) -> None:
        d = grid.ndim
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape != grid.shape + (d, d):
            raise ConstructionError(
                f"metric shape {mat.shape} does not match grid {grid.shape} + ({d},{d})"
            )
        if not np.isfinite(mat).all():
            raise ConstructionError("metric contains non-finite values")
        skew = np.abs(mat - np.swapaxes(mat, -1, -2)).max()
        if skew > 1e-12 * (1.0 + np.abs(mat).max()):
            raise ConstructionError(f"metric is not symmetric (max asymmetry {skew:.3e})")
        mat = 0.5 * (mat + np.swapaxes(mat, -1, -2))
        eigs = np.linalg.eigvalsh(mat)
        if eigs.min() <= 0.0:
            bad = np.argwhere(eigs.min(axis=-1) <= 0.0)[0]
            raise ConstructionError(
                f"metric is not positive definite at node {tuple(int(i) for i in bad)}"
            )
        sqrt_det = np.sqrt(np.linalg.det(mat))
        inv = np.linalg.inv(mat)
        inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
        for arr in (mat, sqrt_det, inv):
            arr.setflags(write=False)
        self.grid = grid
        self.mat = mat
        self.sqrt_det = sqrt_det
        self.inv = inv


def _conformal_polar_matrix(grid: FiberGrid, factor: NDArray[np.float64]) -> NDArray[np.float64]:
    """Polar-chart matrix of ``factor * (d rho^2 + rho^2 d theta^2)``."""
    rho = grid.meshes()[0]
    mat = np.zeros(grid.shape + (2, 2))
    mat[..., 0, 0] = factor
    mat[..., 1, 1] = factor * rho**2
    return mat


def _metric_from_spec(grid: FiberGrid, metric_spec) -> MetricField:
    d = grid.ndim
    polar = grid.kind is GridKind.disk_polar
    if metric_spec is None or (isinstance(metric_spec, str) and metric_spec == "flat"):
        if polar:
            return MetricField(grid, _conformal_polar_matrix(grid, np.ones(grid.shape)))
        mat = np.zeros(grid.shape + (d, d))
        for i in range(d):
            mat[..., i, i] = 1.0
        return MetricField(grid, mat)
    if callable(metric_spec):
        raw = np.asarray(metric_spec(*grid.meshes()), dtype=float)
    else:
        raw = np.asarray(metric_spec, dtype=float)
    if raw.shape == grid.shape + (d, d):
        return MetricField(grid, raw)
    factor = np.array(np.broadcast_to(raw, grid.shape))
    if polar:
        return MetricField(grid, _conformal_polar_matrix(grid, factor))
    mat = np.zeros(grid.shape + (d, d))
    for i in range(d):
        mat[..., i, i] = factor
    return MetricField(grid, mat)


def build_torus(dims, extents=None, metric_spec="flat") -> tuple[FiberGrid, MetricField]:
    """Build a periodic torus grid with its metric.

    Parameters
    ----------
    dims:
        Two or three node counts; three axes produce the lifted 3-D kind.
    extents:
        Axis lengths, default ``2 pi`` each.
    metric_spec:
        ``"flat"``, a callable evaluated on the coordinate meshes returning
        either a conformal factor or full ``(d, d)`` matrices per node, or
        an array of either shape.
    """
    dims = tuple(int(n) for n in dims)
    if len(dims) not in (2, 3):
        raise ConstructionError(f"torus grids have 2 or 3 axes, got {len(dims)}")
    kind = GridKind.torus2d if len(dims) == 2 else GridKind.torus3d_lifted
    if extents is None:
        extents = (2.0 * math.pi,) * len(dims)
    grid = FiberGrid(kind, dims, tuple(extents), BoundaryKind.periodic_all)
    return grid, _metric_from_spec(grid, metric_spec)


def build_polar_disk(n_r: int, n_theta: int, radius: float,
                     metric_spec="flat") -> tuple[FiberGrid, MetricField]:
    """Build a polar disk grid with cell-centered radii and a pinned outer ring."""
    grid = FiberGrid(GridKind.disk_polar, (int(n_r), int(n_theta)),
                     (float(radius), 2.0 * math.pi), BoundaryKind.dirichlet_radial)
    return grid, _metric_from_spec(grid, metric_spec)


def build_hyperbolic_disk(n_r: int, n_theta: int, radius: float) -> tuple[FiberGrid, MetricField]:
    """Build a disk carrying the curvature -1 ball-model metric.

    The conformal factor is ``4 / (1 - rho^2)^2``, so the model is only
    valid for ``radius < 1``.
    """
    if not (0.0 < radius < 1.0):
        raise ModelDomainError(
            f"the hyperbolic ball model needs an outer radius in (0, 1), got {radius}"
        )
    grid = FiberGrid(GridKind.disk_polar, (int(n_r), int(n_theta)),
                     (float(radius), 2.0 * math.pi), BoundaryKind.dirichlet_radial)
    rho = grid.meshes()[0]
    factor = 4.0 / (1.0 - rho**2) ** 2
    return grid, MetricField(grid, _conformal_polar_matrix(grid, factor))


def hyperbolic_conformal_factor(grid: FiberGrid) -> ScalarField:
    """Node values of the ball-model conformal factor ``4 / (1 - rho^2)^2``."""
    if grid.kind is not GridKind.disk_polar:
        raise GridMismatchError("the ball-model factor lives on disk grids")
    rho = grid.meshes()[0]
    return ScalarField(grid, 4.0 / (1.0 - rho**2) ** 2)


# --------------------------------------------------------------------------
# difference stencils


def _axis_derivative(values: NDArray[np.float64], grid: FiberGrid, axis: int) -> NDArray[np.float64]:
    """Second-order derivative of node values along one coordinate axis.

    Works for scalars and for radial flux densities alike: with the signed
    extension of the area density through the disk center, both continue
    across the axis onto the ring ``theta + pi`` with a plus sign.
    """
    d = grid.spacings[axis]
    if grid.periodic_axes[axis]:
        return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2.0 * d)
    # disk radial axis
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * d)
    paired = np.roll(values[0], grid.dims[1] // 2, axis=0)
    out[0] = (values[1] - paired) / (2.0 * d)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * d)
    return out


def coordinate_partials(f: ScalarField) -> NDArray[np.float64]:
    """Covariant components ``d_i f`` as an array of shape ``grid.shape + (d,)``."""
    grid = f.grid
    return np.stack([_axis_derivative(f.values, grid, ax) for ax in range(grid.ndim)], axis=-1)


def gradient(f: ScalarField, metric: MetricField) -> VectorField:
    """Contravariant gradient ``sigma^{ij} d_j f``."""
    metric.grid.require_same(f.grid, "gradient")
    partials = coordinate_partials(f)
    comps = np.einsum("...ij,...j->...i", metric.inv, partials)
    return VectorField(f.grid, comps)


def divergence(X: VectorField, metric: MetricField) -> ScalarField:
    """Flux-form divergence ``(1/sqrt(det)) d_i (sqrt(det) X^i)``.

    Face densities are arithmetic means of the node densities, then
    differenced, so summing ``divergence * sqrt(det) * cell`` over a closed
    grid telescopes to zero up to rounding.
    """
    grid = metric.grid
    grid.require_same(X.grid, "divergence")
    q = metric.sqrt_det[..., None] * X.components
    acc = np.zeros(grid.shape)
    for axis in range(grid.ndim):
        qi = q[..., axis]
        d = grid.spacings[axis]
        if grid.periodic_axes[axis]:
            faces = 0.5 * (qi + np.roll(qi, -1, axis=axis))
            acc += (faces - np.roll(faces, 1, axis=axis)) / d
        else:
            der = np.empty_like(qi)
            faces = 0.5 * (qi[:-1] + qi[1:])
            inner0 = 0.5 * (qi[0] + np.roll(qi[0], grid.dims[1] // 2, axis=0))
            der[0] = (faces[0] - inner0) / d
            der[1:-1] = (faces[1:] - faces[:-1]) / d
            der[-1] = (3.0 * qi[-1] - 4.0 * qi[-2] + qi[-3]) / (2.0 * d)
            acc += der
    return ScalarField(grid, acc / metric.sqrt_det)


def laplace_beltrami(f: ScalarField, metric: MetricField) -> ScalarField:
    """Composition of :func:`divergence` with :func:`gradient`."""
    return divergence(gradient(f, metric), metric)


def inner(X: VectorField, Y: VectorField, metric: MetricField) -> ScalarField:
    """Node-wise pairing ``sigma_ij X^i Y^j``."""
    metric.grid.require_same(X.grid, "inner")
    metric.grid.require_same(Y.grid, "inner")
    vals = np.einsum("...ij,...i,...j->...", metric.mat, X.components, Y.components)
    return ScalarField(metric.grid, vals)


def norm_sq(X: VectorField, metric: MetricField) -> ScalarField:
    """Node-wise squared length; clamped at zero against rounding."""
    vals = inner(X, X, metric).values
    return ScalarField(metric.grid, np.maximum(vals, 0.0))


def integrate(f: ScalarField, metric: MetricField) -> float:
    """Volume integral with density ``sqrt(det sigma)``, exact-accumulation order."""
    metric.grid.require_same(f.grid, "integrate")
    weighted = f.values * metric.sqrt_det
    return math.fsum(weighted.ravel().tolist()) * metric.grid.cell_volume


def volume(metric: MetricField) -> float:
    return integrate(ScalarField.constant(metric.grid, 1.0), metric)


def lift_to_circle(grid2d: FiberGrid, metric: MetricField, h_field: ScalarField,
                   n_circle: int) -> tuple[FiberGrid, MetricField, Callable[[ScalarField], ScalarField]]:
    """Cross a 2-D torus with a unit circle: block metric ``sigma + d theta^2``.

    ``h_field`` is validated to live (positively) on ``grid2d`` so the
    caller can lift it with the returned map; the lift itself is the same
    for every scalar.  Returns the 3-D grid, its metric, and a map sending
    a 2-D scalar field to its circle-invariant lift.
    """
    if grid2d.kind is not GridKind.torus2d:
        raise GridMismatchError("only 2-D torus fibers can be crossed with a circle")
    metric.grid.require_same(grid2d, "lift_to_circle")
    grid2d.require_same(h_field.grid, "lift_to_circle")
    if h_field.values.min() <= 0.0:
        bad = np.argwhere(h_field.values <= 0.0)[0]
        raise ConstructionError(
            f"warping must stay positive, offending node {tuple(int(i) for i in bad)}"
        )
    n_circle = int(n_circle)
    grid3 = FiberGrid(GridKind.torus3d_lifted, grid2d.dims + (n_circle,),
                      grid2d.extents + (2.0 * math.pi,), BoundaryKind.periodic_all)
    mat3 = np.zeros(grid3.shape + (3, 3))
    mat3[..., :2, :2] = metric.mat[:, :, None, :, :]
    mat3[..., 2, 2] = 1.0
    metric3 = MetricField(grid3, mat3)

    def lift_map(f: ScalarField) -> ScalarField:
        grid2d.require_same(f.grid, "lift_map")
        return ScalarField(grid3, np.repeat(f.values[:, :, None], n_circle, axis=2))

    return grid3, metric3, lift_map


def dump_field_csv(f: ScalarField, path) -> None:
    """Write one row per node: indices, chart coordinates, value.

    Columns are ``i,j[,k],x1,x2[,x3],value``; the coordinate columns carry
    the grid's native chart (radius and angle on disks).  Values use
    shortest round-trip decimal formatting.
    """
    grid = f.grid
    idx_names = ["i", "j", "k"][: grid.ndim]
    coord_names = ["x1", "x2", "x3"][: grid.ndim]
    meshes = grid.meshes()
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(idx_names + coord_names + ["value"]) + "\n")
        for idx in np.ndindex(grid.shape):
            cells = [str(i) for i in idx]
            cells += [repr(float(m[idx])) for m in meshes]
            cells.append(repr(float(f.values[idx])))
            fh.write(",".join(cells) + "\n")
