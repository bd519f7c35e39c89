"""Uniform tensor grids on box habitats, scalar fields, and the flux-free Laplacian.

The habitat is a box [0, L1] (x [0, L2]) sampled at nodes (collocation, not
cell averages).  Integrals use the trapezoidal rule, whose weights make the
mirror-closure Laplacian symmetric under the weighted inner product:

    <Lap u, v>_w = <u, Lap v>_w        (discrete Green identity)
    sum_i w_i (Lap u)_i = 0            (no boundary flux)

Both identities hold to rounding, not just to truncation order, which is what
lets the spectral module pose every eigenvalue problem as a symmetric one.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import GridMismatch


@dataclass(frozen=True)
class Grid:
    """Uniform nodes on a 1D interval or 2D box.

    extents: physical length per axis, all positive.
    points:  node count per axis, each >= 3 so the interior stencil exists.
    Spacing per axis is extent / (points - 1).
    """

    extents: tuple[float, ...]
    points: tuple[int, ...]

    def __post_init__(self):
        if len(self.extents) != len(self.points):
            raise ValueError("extents and points must have equal length")
        if len(self.extents) not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        if any(e <= 0 for e in self.extents):
            raise ValueError("extents must be positive")
        if any(n < 3 for n in self.points):
            raise ValueError("need at least 3 points per axis")
        object.__setattr__(self, "extents", tuple(float(e) for e in self.extents))
        object.__setattr__(self, "points", tuple(int(n) for n in self.points))

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / (n - 1) for e, n in zip(self.extents, self.points))

    @property
    def n_points(self) -> int:
        out = 1
        for n in self.points:
            out *= n
        return out

    @property
    def volume(self) -> float:
        out = 1.0
        for e in self.extents:
            out *= e
        return out

    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(0.0, e, n) for e, n in zip(self.extents, self.points))

    def coords(self) -> tuple[np.ndarray, ...]:
        """Flat coordinate arrays, one per axis, aligned with field values."""
        if self.dim == 1:
            return (self.axes()[0],)
        x, y = np.meshgrid(*self.axes(), indexing="ij")
        return x.ravel(), y.ravel()


def interval(n: int = 257, length: float = 1.0) -> Grid:
    """The default 1D habitat [0, length] with n nodes."""
    return Grid((length,), (n,))


def box(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> Grid:
    return Grid((lx, ly), (nx, ny))


@dataclass(frozen=True)
class ScalarField:
    """Node-sampled real function on a grid.  Immutable; all values finite."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n_points,):
            raise ValueError(
                f"values shape {vals.shape} does not match grid with "
                f"{self.grid.n_points} points"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must all be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def _check_same_grid(self, other: "ScalarField"):
        if self.grid != other.grid:
            raise GridMismatch("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, ScalarField):
            self._check_same_grid(other)
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            self._check_same_grid(other)
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - float(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, float(other) - self.values)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            self._check_same_grid(other)
            return ScalarField(self.grid, self.values * other.values)
        return ScalarField(self.grid, self.values * float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, ScalarField):
            self._check_same_grid(other)
            return ScalarField(self.grid, self.values / other.values)
        return ScalarField(self.grid, self.values / float(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


def constant_field(grid: Grid, c: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.n_points, float(c)))


def field_from_function(grid: Grid, fn) -> ScalarField:
    """Sample fn(x) in 1D or fn(x, y) in 2D at the nodes."""
    return ScalarField(grid, np.asarray(fn(*grid.coords()), dtype=float))


@dataclass(frozen=True)
class QuadratureWeights:
    """Trapezoidal weights; non-negative and summing to the habitat volume."""

    grid: Grid
    weights: np.ndarray = field(repr=False)


def _axis_weights(extent: float, n: int) -> np.ndarray:
    w = np.full(n, extent / (n - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@functools.lru_cache(maxsize=64)
def quadrature_weights(grid: Grid) -> QuadratureWeights:
    parts = [_axis_weights(e, n) for e, n in zip(grid.extents, grid.points)]
    w = parts[0]
    for p in parts[1:]:
        w = np.outer(w, p).ravel()
    w.setflags(write=False)
    return QuadratureWeights(grid, w)


def integrate(f: ScalarField) -> float:
    """Trapezoidal approximation of the integral over the habitat.

    Exact for fields affine in each coordinate.
    """
    return float(quadrature_weights(f.grid).weights @ f.values)


def average(f: ScalarField) -> float:
    return integrate(f) / f.grid.volume


def sup_field(f: ScalarField) -> float:
    return float(np.max(f.values))


def inf_field(f: ScalarField) -> float:
    return float(np.min(f.values))


def _axis_laplacian(extent: float, n: int) -> sp.csr_matrix:
    """Second-order central stencil with mirror ghost nodes at both ends."""
    dx = extent / (n - 1)
    main = np.full(n, -2.0)
    lower = np.ones(n - 1)
    upper = np.ones(n - 1)
    upper[0] = 2.0   # ghost u[-1] = u[1]
    lower[-1] = 2.0  # ghost u[n] = u[n-2]
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / dx**2


@functools.lru_cache(maxsize=64)
def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse flux-free (homogeneous Neumann) Laplacian on the grid."""
    axes = [_axis_laplacian(e, n) for e, n in zip(grid.extents, grid.points)]
    if grid.dim == 1:
        return axes[0]
    lx, ly = axes
    nx, ny = grid.points
    return (sp.kron(lx, sp.identity(ny)) + sp.kron(sp.identity(nx), ly)).tocsr()


def neumann_laplacian_apply(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, laplacian_matrix(f.grid) @ f.values)


def gradient_squared(f: ScalarField) -> ScalarField:
    """|grad f|^2 from central differences (one-sided second order at ends)."""
    if f.grid.dim == 1:
        g = np.gradient(f.values, f.grid.spacing[0], edge_order=2)
        return ScalarField(f.grid, g * g)
    nx, ny = f.grid.points
    v = f.values.reshape(nx, ny)
    gx = np.gradient(v, f.grid.spacing[0], axis=0, edge_order=2)
    gy = np.gradient(v, f.grid.spacing[1], axis=1, edge_order=2)
    return ScalarField(f.grid, (gx * gx + gy * gy).ravel())


def relative_gradient_energy(f: ScalarField) -> float:
    """Integral of |grad f / f|^2, evaluated through the discrete Laplacian.

    Uses the summation-by-parts identity  sum_i w_i (Lap f)_i / f_i =
    sum_edges (df)^2 / (w_e f_i f_j), so the value is consistent with the
    Green identity of the same operator.  Requires f > 0 everywhere.
    """
    if np.min(f.values) <= 0:
        raise ValueError("relative gradient energy needs a strictly positive field")
    w = quadrature_weights(f.grid).weights
    lap = laplacian_matrix(f.grid) @ f.values
    return float(np.sum(w * lap / f.values))


def field_to_csv(f: ScalarField, path) -> None:
    """Write a field as CSV with columns x[,y],value and a header row."""
    coords = f.grid.coords()
    names = ["x", "y"][: f.grid.dim] + ["value"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in zip(*coords, f.values):
            writer.writerow([f"{v:.17g}" for v in row])


def field_from_csv(path, grid: Grid | None = None) -> ScalarField:
    """Read a field CSV written by field_to_csv.

    If grid is given the node count must match; otherwise a 1D grid is
    reconstructed from the x column (assumed uniform ascending).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, r)) for r in reader if r]
    ncol = len(header)
    values = np.array([r[-1] for r in rows])
    if grid is not None:
        if len(values) != grid.n_points:
            raise GridMismatch(
                f"CSV has {len(values)} rows, grid expects {grid.n_points}"
            )
        return ScalarField(grid, values)
    if ncol != 2:
        raise ValueError("grid reconstruction from CSV is only supported in 1D")
    xs = np.array([r[0] for r in rows])
    g = Grid((float(xs[-1] - xs[0]),), (len(xs),))
    return ScalarField(g, values)
