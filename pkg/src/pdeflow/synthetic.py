"""Synthetic ground truth: smooth potentials, diffusivities and initial fields."""

from __future__ import annotations

import numpy as np

from .dataio import VolumeSeries
from .errors import ValidationError
from .fields import DiffusivityParamIso, Potentials, cross_gradients, diffusivity_iso, velocity_from_potentials
from .grid import DomainMask, Grid3, ScalarField, _smooth_array
from .solver import BoundaryData, Mode, SolverConfig, integrate

__all__ = [
    "smooth_random_field",
    "ground_truth_potentials",
    "ground_truth_diffusivity",
    "initial_concentration",
    "blob",
    "box_mask",
    "ellipsoid_mask",
    "simulate",
]


def smooth_random_field(grid: Grid3, rng: np.random.Generator, corr: float) -> np.ndarray:
    """White noise smoothed with a Gaussian of ``corr`` voxels, scaled to unit std."""
    a = _smooth_array(rng.standard_normal(grid.dims), corr, "reflect")
    a -= a.mean()
    sd = a.std()
    return a / sd if sd > 0 else a


def ground_truth_potentials(grid: Grid3, rng: np.random.Generator, v_max: float, corr: float = 4.0) -> Potentials:
    """Smooth random potentials scaled so that ``max |V| = v_max``.

    V is bilinear in the potentials, so both are scaled by
    ``sqrt(v_max / max|V|)``.
    """
    g1 = smooth_random_field(grid, rng, corr)
    g2 = smooth_random_field(grid, rng, corr)
    peak = float(np.sqrt((cross_gradients(g1, g2, grid.spacing) ** 2).sum(axis=0)).max())
    s = np.sqrt(v_max / peak) if peak > 0 else 0.0
    return Potentials(ScalarField(grid, s * g1), ScalarField(grid, s * g2))


def ground_truth_diffusivity(grid: Grid3, rng: np.random.Generator, d_min: float, d_max: float,
                             corr: float = 4.0) -> DiffusivityParamIso:
    """Smooth diffusivity spanning ``[d_min, d_max]``, returned as ``L = sqrt(D)``."""
    if not 0 <= d_min <= d_max:
        raise ValidationError("need 0 <= d_min <= d_max")
    f = smooth_random_field(grid, rng, corr)
    lo, hi = f.min(), f.max()
    u = (f - lo) / (hi - lo) if hi > lo else np.zeros_like(f)
    return DiffusivityParamIso(ScalarField(grid, np.sqrt(d_min + (d_max - d_min) * u)))


def initial_concentration(grid: Grid3, rng: np.random.Generator, corr: float = 2.0, base: float = 1.0,
                          amp: float = 0.5) -> ScalarField:
    """Positive band-limited field ``base + amp * n`` with ``n`` in ``[-1, 1]``."""
    f = smooth_random_field(grid, rng, corr)
    f /= max(np.abs(f).max(), 1e-300)
    return ScalarField(grid, np.maximum(base + amp * f, 0.0))


def blob(grid: Grid3, center, radius: float, height: float = 1.0) -> ScalarField:
    """Gaussian blob with standard deviation ``radius`` (mm)."""
    x, y, z = grid.coords()
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    return ScalarField(grid, height * np.exp(-0.5 * r2 / radius**2))


def box_mask(grid: Grid3, dirichlet_slabs: bool | None = None) -> DomainMask:
    return DomainMask.from_inside(grid, np.ones(grid.dims, dtype=bool), dirichlet_slabs)


def ellipsoid_mask(grid: Grid3, fill: float = 0.9, dirichlet_slabs: bool | None = None) -> DomainMask:
    """Axis-aligned ellipsoid covering ``fill`` of each in-plane extent, full height in z."""
    idx = np.indices(grid.dims, dtype=np.float64)
    r2 = np.zeros(grid.dims)
    for a in range(2):
        n = grid.dims[a]
        if n > 1:
            half = 0.5 * (n - 1)
            r2 += ((idx[a] - half) / (fill * half + 0.5)) ** 2
    return DomainMask.from_inside(grid, r2 <= 1.0, dirichlet_slabs)


def simulate(c0: ScalarField, potentials: Potentials | None, diffus: DiffusivityParamIso | None, mask: DomainMask,
             mode: Mode, T: int, dt_frames: float, dt: float, integrator="rk45", face_rule: str = "mean",
             boundary: BoundaryData | None = None) -> VolumeSeries:
    """Forward-only generation of ``T + 1`` frames; slabs hold ``c0`` unless ``boundary`` is given."""
    mode = Mode(mode)
    v = velocity_from_potentials(potentials) if (mode.advects and potentials is not None) else None
    d = diffusivity_iso(diffus) if (mode.diffuses and diffus is not None) else None
    cfg = SolverConfig(dt=dt, mode=mode, integrator=integrator, face_rule=face_rule)
    bd = boundary if boundary is not None else BoundaryData.constant(c0, mask)
    out = integrate(c0, v, d, mask, bd, cfg, T * dt_frames, dt_frames)
    out.meta["mode"] = mode.value
    return out
