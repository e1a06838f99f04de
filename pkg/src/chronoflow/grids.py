"""Uniform grids, fields, and the discrete calculus used everywhere else.

All differential operators are 4th-order finite differences (central in the
interior, one-sided within two points of a boundary), quadrature is
trapezoidal, and off-node evaluation uses 4-point cubic interpolation.
Fields are immutable after construction; every operation returns a new field.
"""

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import DimensionError, OutOfDomainError

AXIS_R = "R"
AXIS_r = "r"


@dataclass(frozen=True)
class Grid1D:
    """Uniform 1D grid with points exactly ``min + k * spacing``."""

    min: float
    max: float
    n: int

    def __post_init__(self):
        if self.n < 8:
            raise DimensionError(f"grid needs n >= 8 points, got {self.n}")
        if not self.max > self.min:
            raise DimensionError(f"grid needs max > min, got [{self.min}, {self.max}]")

    @property
    def spacing(self):
        return (self.max - self.min) / (self.n - 1)

    @cached_property
    def points(self):
        pts = self.min + np.arange(self.n) * self.spacing
        pts.flags.writeable = False
        return pts

    def contains(self, x):
        tol = 1e-12 * (self.max - self.min)
        x = np.asarray(x)
        return (x >= self.min - tol) & (x <= self.max + tol)


@dataclass(frozen=True)
class ProductGrid2D:
    """Product grid (R outer, r inner); 2D arrays are shaped (n_R, n_r)."""

    grid_R: Grid1D
    grid_r: Grid1D

    @property
    def shape(self):
        return (self.grid_R.n, self.grid_r.n)

    def axis_index(self, axis):
        if axis == AXIS_R:
            return 0
        if axis == AXIS_r:
            return 1
        raise DimensionError(f"unknown axis {axis!r} (expected 'R' or 'r')")

    def axis_grid(self, axis):
        return (self.grid_R, self.grid_r)[self.axis_index(axis)]

    def meshgrid(self):
        return np.meshgrid(self.grid_R.points, self.grid_r.points, indexing="ij")


class _Field:
    """Grid-attached value array. Values are frozen at construction."""

    _dtype = None

    def __init__(self, grid, values, allow_undefined=False):
        values = np.asarray(values, dtype=self._dtype)
        shape = grid.shape if isinstance(grid, ProductGrid2D) else (grid.n,)
        if values.shape != shape:
            raise DimensionError(
                f"values shape {values.shape} does not match grid shape {shape}"
            )
        if not allow_undefined and not np.all(np.isfinite(values)):
            raise DimensionError("field values must be finite")
        values = values.copy()
        values.flags.writeable = False
        self.grid = grid
        self.values = values

    @property
    def ndim(self):
        return self.values.ndim

    def with_values(self, values, allow_undefined=False):
        return type(self)(self.grid, values, allow_undefined=allow_undefined)


class ScalarField(_Field):
    _dtype = np.float64


class ComplexField(_Field):
    _dtype = np.complex128


def _fd_weights(offsets, order):
    """Stencil weights for d^order/dx^order at 0 from nodes at `offsets` (units of h)."""
    offsets = np.asarray(offsets, dtype=float)
    k = np.arange(len(offsets))
    # Taylor matching: sum_j w_j offs_j^k = k! * delta(k, order)
    A = offsets[None, :] ** k[:, None]
    b = np.zeros(len(offsets))
    b[order] = math.factorial(order)
    w = np.linalg.solve(A, b)
    # pin the zero-row-sum constraint exactly so constants differentiate to 0.0
    w[np.argmin(np.abs(offsets))] -= w.sum()
    return w


@lru_cache(maxsize=64)
def derivative_matrix(n, spacing, order):
    """Dense n x n matrix applying the 4th-order d/dx or d2/dx2 stencil.

    Interior rows use the centered 5-point stencil; the two rows nearest each
    boundary use one-sided stencils of the same order (5 nodes for the first
    derivative, 6 for the second).
    """
    if order not in (1, 2):
        raise DimensionError(f"derivative order must be 1 or 2, got {order}")
    if n < 8:
        raise DimensionError(f"derivative needs >= 8 points along the axis, got {n}")
    width = 5 if order == 1 else 6
    D = np.zeros((n, n))
    central = _fd_weights(np.arange(-2, 3), order)
    for i in range(n):
        if 2 <= i <= n - 3:
            D[i, i - 2 : i + 3] = central
        else:
            base = 0 if i < 2 else n - width
            D[i, base : base + width] = _fd_weights(np.arange(base, base + width) - i, order)
    D /= spacing**order
    return D


def derivative_values(values, spacing, order=1, axis=-1):
    """Raw-array differentiation along one axis (helper for field code)."""
    values = np.asarray(values)
    axis = axis % values.ndim
    D = derivative_matrix(values.shape[axis], float(spacing), order)
    moved = np.moveaxis(values, axis, 0)
    out = np.tensordot(D, moved, axes=([1], [0]))
    return np.moveaxis(out, 0, axis)


def derivative(field, axis=None, order=1):
    """Differentiate a field along `axis` ('R' or 'r' for 2D fields)."""
    if field.ndim == 1:
        out = derivative_matrix(field.grid.n, field.grid.spacing, order) @ field.values
        return field.with_values(out)
    idx = field.grid.axis_index(axis)
    g = field.grid.axis_grid(axis)
    D = derivative_matrix(g.n, g.spacing, order)
    out = D @ field.values if idx == 0 else field.values @ D.T
    return field.with_values(out)


def trapezoid_weights(grid):
    w = np.full(grid.n, grid.spacing)
    w[0] = w[-1] = 0.5 * grid.spacing
    return w


def integrate(field, axis="all"):
    """Trapezoidal quadrature along one axis or over the whole domain."""
    if field.ndim == 1:
        if axis not in ("all", None):
            raise DimensionError(f"1D field has no axis {axis!r}")
        return np.dot(trapezoid_weights(field.grid), field.values)
    if axis == "all":
        wR = trapezoid_weights(field.grid.grid_R)
        wr = trapezoid_weights(field.grid.grid_r)
        return wR @ field.values @ wr
    idx = field.grid.axis_index(axis)
    g = field.grid.axis_grid(axis)
    w = trapezoid_weights(g)
    reduced = np.tensordot(w, field.values, axes=([0], [idx]))
    other = field.grid.grid_r if idx == 0 else field.grid.grid_R
    cls = ComplexField if np.iscomplexobj(field.values) else ScalarField
    return cls(other, reduced, allow_undefined=True)


def _cubic_basis(t):
    """4-point cubic Lagrange weights at local coordinate t in [0, 3]."""
    w0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0
    w1 = t * (t - 2.0) * (t - 3.0) / 2.0
    w2 = -t * (t - 1.0) * (t - 3.0) / 2.0
    w3 = t * (t - 1.0) * (t - 2.0) / 6.0
    return w0, w1, w2, w3


def _axis_stencil(grid, x, axis_name):
    x = np.asarray(x, dtype=float)
    inside = grid.contains(x)
    if not np.all(inside):
        bad = np.asarray(x).ravel()[~np.asarray(inside).ravel()][0]
        raise OutOfDomainError(axis_name, float(bad), grid.min, grid.max)
    u = (x - grid.min) / grid.spacing
    cell = np.clip(np.floor(u).astype(int), 0, grid.n - 2)
    base = np.clip(cell - 1, 0, grid.n - 4)
    return base, _cubic_basis(u - base)


def interp_values_1d(grid, values, x, axis_name="x"):
    base, (w0, w1, w2, w3) = _axis_stencil(grid, x, axis_name)
    v = values
    return w0 * v[base] + w1 * v[base + 1] + w2 * v[base + 2] + w3 * v[base + 3]


def interp_values_2d(grid2d, values, R, r):
    baseR, wR = _axis_stencil(grid2d.grid_R, R, AXIS_R)
    baser, wr = _axis_stencil(grid2d.grid_r, r, AXIS_r)
    off = np.arange(4)
    block = values[
        np.asarray(baseR)[..., None, None] + off[:, None],
        np.asarray(baser)[..., None, None] + off[None, :],
    ]
    wR = np.stack(wR, axis=-1)
    wr = np.stack(wr, axis=-1)
    return np.einsum("...ij,...i,...j->...", block, wR, wr)


def interpolate(field, point, time_bracket=None):
    """Evaluate a field at off-node points (cubic per spatial axis).

    `point` is a coordinate (or arrays of coordinates) — a single value for 1D
    fields, an (R, r) pair for 2D fields.  When `time_bracket` is given as
    ``((field_b, t_a, t_b), t)``-style arguments use :func:`interpolate_in_time`.
    """
    if time_bracket is not None:
        (other, t_a, t_b, t) = time_bracket
        return interpolate_in_time(field, other, t_a, t_b, point, t)
    if field.ndim == 1:
        return interp_values_1d(field.grid, field.values, point)
    R, r = point
    return interp_values_2d(field.grid, field.values, R, r)


def interpolate_in_time(field_a, field_b, t_a, t_b, point, t):
    """Cubic in space, linear in time between two bracketing snapshots."""
    if not (min(t_a, t_b) - 1e-12 <= t <= max(t_a, t_b) + 1e-12):
        raise OutOfDomainError("t", t, t_a, t_b)
    va = interpolate(field_a, point)
    vb = interpolate(field_b, point)
    w = 0.0 if t_b == t_a else (t - t_a) / (t_b - t_a)
    return (1.0 - w) * va + w * vb
