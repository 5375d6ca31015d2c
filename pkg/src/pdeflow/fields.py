"""Parameter fields and the maps from free parameters to physical fields.

The velocity is generated from two potentials as the cross product of
their gradients, so it is divergence-free up to discretization error.  The
diffusivity is a pointwise square, so it can never go negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, ValidationError
from .grid import Grid3, ScalarField, Scheme, VectorField, d_axis, d_axis_T

__all__ = [
    "Potentials",
    "DiffusivityParamIso",
    "CholeskyField",
    "FeatureMaps",
    "velocity_from_potentials",
    "diffusivity_iso",
    "diffusion_tensor_from_cholesky",
    "feature_maps",
    "cross_gradients",
    "cross_gradients_vjp",
]


@dataclass(frozen=True, eq=False)
class Potentials:
    gamma1: ScalarField
    gamma2: ScalarField

    def __post_init__(self):
        if self.gamma1.grid != self.gamma2.grid:
            raise GridMismatchError("potentials live on different grids")

    @property
    def grid(self) -> Grid3:
        return self.gamma1.grid


@dataclass(frozen=True, eq=False)
class DiffusivityParamIso:
    """Square-root diffusivity ``L`` (mm/sqrt(s)); ``D = L**2``."""

    l: ScalarField

    @property
    def grid(self) -> Grid3:
        return self.l.grid


_CHOL_KEYS = ("l11", "l12", "l13", "l22", "l23", "l33")


@dataclass(frozen=True, eq=False)
class CholeskyField:
    """Per-voxel upper-triangular Cholesky factor of a diffusion tensor."""

    l11: ScalarField
    l12: ScalarField
    l13: ScalarField
    l22: ScalarField
    l23: ScalarField
    l33: ScalarField

    def __post_init__(self):
        grids = {getattr(self, k).grid for k in _CHOL_KEYS}
        if len(grids) != 1:
            raise GridMismatchError("Cholesky entries live on different grids")
        for k in ("l11", "l22", "l33"):
            if np.any(getattr(self, k).values < 0):
                raise ValidationError(f"Cholesky diagonal {k} must be >= 0")

    @property
    def grid(self) -> Grid3:
        return self.l11.grid

    def matrix(self) -> np.ndarray:
        """Factor as an ``(Nx, Ny, Nz, 3, 3)`` array."""
        g = self.grid
        m = np.zeros(g.dims + (3, 3))
        m[..., 0, 0] = self.l11.values
        m[..., 0, 1] = self.l12.values
        m[..., 0, 2] = self.l13.values
        m[..., 1, 1] = self.l22.values
        m[..., 1, 2] = self.l23.values
        m[..., 2, 2] = self.l33.values
        return m


@dataclass(frozen=True, eq=False)
class FeatureMaps:
    v_mag: ScalarField
    v_rgb: tuple[ScalarField, ScalarField, ScalarField]
    d: ScalarField
    peclet: ScalarField
    inv_peclet: ScalarField


def _grad2(g2: np.ndarray, spacing) -> np.ndarray:
    b = np.stack([d_axis(g2, i, spacing[i], Scheme.CENTRAL) for i in range(3)])
    if g2.shape[2] == 1:
        # planar grid: the second potential carries an implicit +z, so g1 acts as a stream function
        b[2] += 1.0
    return b


def cross_gradients(g1: np.ndarray, g2: np.ndarray, spacing) -> np.ndarray:
    """``grad(g1) x grad(g2)`` with central differences, shape ``(3,) + g1.shape``.

    On planar grids (``Nz == 1``) the second potential is taken as
    ``g2 + z``, which gives the in-plane stream-function velocity
    ``(d g1/dy, -d g1/dx, 0)`` plus the inert out-of-plane term.
    """
    a = np.stack([d_axis(g1, i, spacing[i], Scheme.CENTRAL) for i in range(3)])
    return np.cross(a, _grad2(g2, spacing), axis=0)


def cross_gradients_vjp(g1: np.ndarray, g2: np.ndarray, vbar: np.ndarray, spacing):
    """Pull a cotangent on the velocity back to both potentials."""
    a = np.stack([d_axis(g1, i, spacing[i], Scheme.CENTRAL) for i in range(3)])
    b = _grad2(g2, spacing)
    # <vbar, a x b> = <b x vbar, a> = <vbar x a, b>
    abar = np.cross(b, vbar, axis=0)
    bbar = np.cross(vbar, a, axis=0)
    g1bar = sum(d_axis_T(abar[i], i, spacing[i], Scheme.CENTRAL) for i in range(3))
    g2bar = sum(d_axis_T(bbar[i], i, spacing[i], Scheme.CENTRAL) for i in range(3))
    return g1bar, g2bar


def velocity_from_potentials(p: Potentials) -> VectorField:
    g = p.grid
    return VectorField(g, cross_gradients(p.gamma1.values, p.gamma2.values, g.spacing))


def diffusivity_iso(p: DiffusivityParamIso) -> ScalarField:
    return ScalarField(p.grid, np.square(p.l.values))


def diffusion_tensor_from_cholesky(c: CholeskyField) -> np.ndarray:
    """``D = L^T L`` per voxel, returned as ``(Nx, Ny, Nz, 3, 3)``."""
    m = c.matrix()
    return np.einsum("...ki,...kj->...ij", m, m)


def feature_maps(v: VectorField, d: ScalarField, char_len: float = 1.0) -> FeatureMaps:
    """Velocity magnitude, orientation colors, diffusivity and Peclet maps.

    Where ``D = 0`` the Peclet number is stored as ``+inf``; where
    ``|V| = 0`` the inverse Peclet number is ``+inf``.  Exports treat
    infinities as missing.
    """
    if v.grid != d.grid:
        raise GridMismatchError("velocity and diffusivity live on different grids")
    if not char_len > 0:
        raise ValidationError("char_len must be > 0")
    vals = v.values
    mag = np.sqrt(np.sum(vals**2, axis=0))
    nonzero = mag > 0
    safe = np.where(nonzero, mag, 1.0)
    rgb = [np.where(nonzero, np.abs(vals[i]) / safe, 0.0) for i in range(3)]
    rgb = [np.clip(c, 0.0, 1.0) for c in rgb]

    dv = d.values
    adv = char_len * mag
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = np.where(dv > 0, adv / np.where(dv > 0, dv, 1.0), np.inf)
        inv = np.where(adv > 0, dv / np.where(adv > 0, adv, 1.0), np.inf)
    g = v.grid
    return FeatureMaps(
        v_mag=ScalarField(g, mag),
        v_rgb=tuple(ScalarField(g, c) for c in rgb),
        d=ScalarField(g, dv),
        peclet=ScalarField._unchecked(g, pe),
        inv_peclet=ScalarField._unchecked(g, inv),
    )
