"""Regular 3D grids, voxel fields, domain masks and finite-difference stencils.

Arrays are indexed ``[x, y, z]`` with shape ``(Nx, Ny, Nz)``.  The linear
voxel index used by the file format is x-fastest,
``x + Nx * (y + Ny * z)``, i.e. ``values.ravel(order="F")``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import GridMismatchError, ValidationError

__all__ = [
    "Grid3",
    "ScalarField",
    "VectorField",
    "BoundaryClass",
    "DomainMask",
    "Scheme",
    "grad_fd",
    "divergence_fd",
    "gaussian_smooth",
    "gaussian_kernel1d",
    "d_axis",
    "d_axis_T",
]


@dataclass(frozen=True)
class Grid3:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(h) for h in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise ValidationError("Grid3 needs three dims and three spacings")
        if any(n < 1 for n in dims):
            raise ValidationError(f"grid dims must be positive, got {dims}")
        if not all(math.isfinite(h) and h > 0 for h in spacing):
            raise ValidationError(f"grid spacings must be finite and > 0, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def zeros(self) -> np.ndarray:
        return np.zeros(self.dims)

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Physical voxel coordinates (mm), broadcastable to ``shape``."""
        return tuple(
            np.arange(n).reshape([-1 if a == i else 1 for a in range(3)]) * h
            for i, (n, h) in enumerate(zip(self.dims, self.spacing))
        )


def _as_volume(grid: Grid3, values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1 and arr.size == grid.size:
        arr = arr.reshape(grid.dims, order="F")
    if arr.shape != grid.dims:
        raise GridMismatchError(f"values of shape {arr.shape} do not fit grid {grid.dims}")
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A real field on a :class:`Grid3`. Values are copied and frozen."""

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(_as_volume(self.grid, self.values), dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("ScalarField values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def _unchecked(cls, grid: Grid3, values: np.ndarray) -> "ScalarField":
        # sentinel maps (e.g. Peclet with D = 0) legitimately carry +inf
        obj = object.__new__(cls)
        arr = np.array(values, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(obj, "grid", grid)
        object.__setattr__(obj, "values", arr)
        return obj

    @classmethod
    def zeros(cls, grid: Grid3) -> "ScalarField":
        return cls(grid, grid.zeros())

    def flat(self) -> np.ndarray:
        """Values in x-fastest linear order."""
        return self.values.ravel(order="F")

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Three voxel-aligned components stacked as ``values[axis]``."""

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, order="C")
        if arr.shape != (3,) + self.grid.dims:
            raise GridMismatchError(f"vector values of shape {arr.shape} do not fit grid {self.grid.dims}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("VectorField values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_components(cls, vx: ScalarField, vy: ScalarField, vz: ScalarField) -> "VectorField":
        if not (vx.grid == vy.grid == vz.grid):
            raise GridMismatchError("vector components live on different grids")
        return cls(vx.grid, np.stack([vx.values, vy.values, vz.values]))

    def component(self, axis: int) -> ScalarField:
        return ScalarField(self.grid, self.values[axis])

    @property
    def x(self) -> ScalarField:
        return self.component(0)

    @property
    def y(self) -> ScalarField:
        return self.component(1)

    @property
    def z(self) -> ScalarField:
        return self.component(2)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=0))


class BoundaryClass(enum.IntEnum):
    INTERIOR = 0
    DIRICHLET_SLAB = 1
    NEUMANN_CONTOUR = 2
    OUTSIDE = 3


@dataclass(frozen=True, eq=False)
class DomainMask:
    """Domain membership and boundary classification.

    Build with :meth:`from_inside`; the classification is derived, never
    supplied by hand.
    """

    grid: Grid3
    inside: np.ndarray
    boundary_class: np.ndarray

    @classmethod
    def from_inside(cls, grid: Grid3, inside=None, dirichlet_slabs: bool | None = None) -> "DomainMask":
        """Classify voxels of ``inside`` (all-true when omitted).

        Dirichlet slabs are the inside voxels on the first and last z slice.
        ``dirichlet_slabs=None`` enables them only when ``Nz >= 3``, so 2D
        problems (``Nz = 1``) stay closed-Neumann by default.
        """
        if inside is None:
            inside = np.ones(grid.dims, dtype=bool)
        inside = np.asarray(inside, dtype=bool)
        if inside.ndim == 1 and inside.size == grid.size:
            inside = inside.reshape(grid.dims, order="F")
        if inside.shape != grid.dims:
            raise GridMismatchError(f"mask of shape {inside.shape} does not fit grid {grid.dims}")
        nz = grid.dims[2]
        if dirichlet_slabs is None:
            dirichlet_slabs = nz >= 3

        slab = np.zeros(grid.dims, dtype=bool)
        if dirichlet_slabs:
            slab[:, :, 0] = True
            slab[:, :, nz - 1] = True
        slab &= inside

        # a neighbor off the array counts as outside, except along size-1 axes
        touches_outside = np.zeros(grid.dims, dtype=bool)
        for axis, n in enumerate(grid.dims):
            if n == 1:
                continue
            padded = np.pad(inside, [(1, 1) if a == axis else (0, 0) for a in range(3)], constant_values=False)
            lo = np.take(padded, range(0, n), axis=axis)
            hi = np.take(padded, range(2, n + 2), axis=axis)
            touches_outside |= ~lo | ~hi

        cls_arr = np.full(grid.dims, BoundaryClass.OUTSIDE, dtype=np.uint8)
        cls_arr[inside] = BoundaryClass.INTERIOR
        cls_arr[inside & touches_outside & ~slab] = BoundaryClass.NEUMANN_CONTOUR
        cls_arr[slab] = BoundaryClass.DIRICHLET_SLAB
        inside = inside.copy()
        inside.setflags(write=False)
        cls_arr.setflags(write=False)
        return cls(grid, inside, cls_arr)

    @property
    def dirichlet(self) -> np.ndarray:
        return self.boundary_class == BoundaryClass.DIRICHLET_SLAB

    @property
    def active(self) -> np.ndarray:
        """Voxels whose concentration evolves under the PDE."""
        return self.inside & ~self.dirichlet

    @property
    def count(self) -> int:
        return int(self.inside.sum())


class Scheme(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    CENTRAL = "central"


def d_axis(f: np.ndarray, axis: int, h: float, scheme: Scheme | str = Scheme.CENTRAL) -> np.ndarray:
    """Derivative of ``f`` along ``axis``; one-sided stencils clamp at the edges."""
    scheme = Scheme(scheme)
    n = f.shape[axis]
    out = np.zeros_like(f, dtype=np.float64)
    if n == 1:
        return out
    f = np.moveaxis(f, axis, 0)
    o = np.moveaxis(out, axis, 0)
    fwd = (f[1:] - f[:-1]) / h  # value at face i + 1/2, i = 0..n-2
    if scheme is Scheme.FORWARD:
        o[:-1] = fwd
        o[-1] = fwd[-1]
    elif scheme is Scheme.BACKWARD:
        o[1:] = fwd
        o[0] = fwd[0]
    else:
        o[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
        o[0] = fwd[0]
        o[-1] = fwd[-1]
    return out


def d_axis_T(g: np.ndarray, axis: int, h: float, scheme: Scheme | str = Scheme.CENTRAL) -> np.ndarray:
    """Transpose (adjoint) of :func:`d_axis` as a linear operator."""
    scheme = Scheme(scheme)
    n = g.shape[axis]
    out = np.zeros_like(g, dtype=np.float64)
    if n == 1:
        return out
    g = np.moveaxis(g, axis, 0)
    o = np.moveaxis(out, axis, 0)
    # w[i] is the coefficient carried by the face difference f[i+1] - f[i]
    w = np.zeros((n - 1,) + g.shape[1:])
    if scheme is Scheme.FORWARD:
        w += g[:-1]
        w[-1] += g[-1]
    elif scheme is Scheme.BACKWARD:
        w += g[1:]
        w[0] += g[0]
    else:
        w[0] += g[0]
        w[-1] += g[-1]
        if n > 2:
            half = g[1:-1] / 2.0
            w[1:] += half
            w[:-1] += half
    w /= h
    o[1:] += w
    o[:-1] -= w
    return out


def grad_fd(f: ScalarField, scheme: Scheme | str = Scheme.CENTRAL) -> VectorField:
    comps = [d_axis(f.values, a, f.grid.spacing[a], scheme) for a in range(3)]
    return VectorField(f.grid, np.stack(comps))


def divergence_fd(v: VectorField, scheme: Scheme | str = Scheme.CENTRAL) -> ScalarField:
    if not isinstance(v, VectorField):
        raise GridMismatchError("divergence_fd expects a VectorField")
    total = sum(d_axis(v.values[a], a, v.grid.spacing[a], scheme) for a in range(3))
    return ScalarField(v.grid, total)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized Gaussian taps with radius ``ceil(3 sigma)``."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _smooth_array(f: np.ndarray, sigma: float, edge: str) -> np.ndarray:
    out = np.array(f, dtype=np.float64)
    if sigma == 0:
        return out
    w = gaussian_kernel1d(sigma)
    for axis in range(out.ndim):
        if out.shape[axis] == 1:
            continue
        if edge == "reflect":
            out = ndimage.correlate1d(out, w, axis=axis, mode="reflect")
        else:
            num = ndimage.correlate1d(out, w, axis=axis, mode="constant", cval=0.0)
            den = ndimage.correlate1d(np.ones_like(out), w, axis=axis, mode="constant", cval=0.0)
            out = num / den
    return out


def gaussian_smooth(f: ScalarField, sigma: float, edge: str = "reflect") -> ScalarField:
    """Separable truncated Gaussian smoothing, ``sigma`` in voxels.

    ``edge="reflect"`` (half-sample symmetric extension) preserves the sum
    of values exactly; ``edge="renormalize"`` rescales the in-bounds taps
    to unit weight instead, which keeps constants but not mass.
    """
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise ValidationError(f"sigma must be a finite number >= 0, got {sigma}")
    if edge not in ("reflect", "renormalize"):
        raise ValidationError(f"unknown edge policy {edge!r}")
    return ScalarField(f.grid, _smooth_array(f.values, sigma, edge))
