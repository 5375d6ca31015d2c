"""Advection-diffusion forward model on a masked grid and its discrete adjoint.

The semi-discrete system is ``dC/dt = -V . grad C + div(D grad C)`` on the
active voxels (inside the domain, off the Dirichlet slabs).  Slab voxels
follow the measured concentrations, outside voxels stay at zero, and faces
to missing neighbors carry no flux (homogeneous Neumann).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataio import VolumeSeries
from .errors import CFLError, GridMismatchError, ValidationError
from .grid import DomainMask, Grid3, ScalarField, VectorField

__all__ = [
    "Mode",
    "Integrator",
    "SolverConfig",
    "BoundaryData",
    "CFLResult",
    "advect_upwind",
    "diffuse",
    "apply_bc",
    "cfl_check",
    "integrate",
    "Propagator",
]


class Mode(str, enum.Enum):
    ADVECTION_DIFFUSION = "advdiff"
    ADVECTION_ONLY = "advection"
    DIFFUSION_ONLY = "diffusion"

    @property
    def advects(self) -> bool:
        return self is not Mode.DIFFUSION_ONLY

    @property
    def diffuses(self) -> bool:
        return self is not Mode.ADVECTION_ONLY


class Integrator(str, enum.Enum):
    RK45 = "rk45"
    RK4 = "rk4"


@dataclass(frozen=True)
class Tableau:
    c: tuple
    a: tuple
    b: tuple
    b_err: tuple | None = None  # b_high - b_low, for the embedded estimate


RK4 = Tableau(
    c=(0.0, 0.5, 0.5, 1.0),
    a=((), (0.5,), (0.0, 0.5), (0.0, 0.0, 1.0)),
    b=(1 / 6, 1 / 3, 1 / 3, 1 / 6),
)

# Fehlberg 4(5); the 4th-order solution is propagated
_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)
RKF45 = Tableau(
    c=(0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2),
    a=(
        (),
        (1 / 4,),
        (3 / 32, 9 / 32),
        (1932 / 2197, -7200 / 2197, 7296 / 2197),
        (439 / 216, -8.0, 3680 / 513, -845 / 4104),
        (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
    ),
    b=_B4,
    b_err=tuple(h - l for h, l in zip(_B5, _B4)),
)

TABLEAUS = {Integrator.RK45: RKF45, Integrator.RK4: RK4}


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 0.02
    cfl_safety: float = 0.8
    mode: Mode = Mode.ADVECTION_DIFFUSION
    integrator: Integrator = Integrator.RK45
    face_rule: str = "mean"  # or "nested": diffusivity of the higher-index voxel
    boundary_interp: str = "linear"  # or "hold"

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be > 0, got {self.dt}")
        if not 0 < self.cfl_safety <= 1:
            raise ValidationError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.face_rule not in ("mean", "nested"):
            raise ValidationError(f"unknown face_rule {self.face_rule!r}")
        if self.boundary_interp not in ("linear", "hold"):
            raise ValidationError(f"unknown boundary_interp {self.boundary_interp!r}")


class BoundaryData:
    """Measured slab concentrations, interpolated in time between frames.

    ``values[k]`` holds the slab voxels of frame ``k`` taken at time
    ``t0 + k * dt_frames``.
    """

    def __init__(self, mask: DomainMask, frames: np.ndarray, dt_frames: float, t0: float = 0.0,
                 interp: str = "linear"):
        self.index = np.flatnonzero(mask.dirichlet.ravel())
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 3:
            frames = frames[None]
        self.values = frames.reshape(frames.shape[0], -1)[:, self.index].copy()
        self.dt_frames = float(dt_frames)
        self.t0 = float(t0)
        self.interp = interp

    @classmethod
    def from_series(cls, series: VolumeSeries, mask: DomainMask, start: int = 0, stop: int | None = None,
                    interp: str = "linear") -> "BoundaryData":
        frames = series.frames[start:stop]
        return cls(mask, frames, series.dt_frames, 0.0, interp)

    @classmethod
    def constant(cls, c0, mask: DomainMask) -> "BoundaryData":
        vals = c0.values if isinstance(c0, ScalarField) else np.asarray(c0)
        return cls(mask, vals[None], 1.0)

    @property
    def t_end(self) -> float:
        return self.t0 + (self.values.shape[0] - 1) * self.dt_frames

    def at(self, t: float) -> np.ndarray:
        if self.index.size == 0:
            return self.values[0] if self.values.size else np.empty(0)
        k_max = self.values.shape[0] - 1
        s = (t - self.t0) / self.dt_frames
        if k_max == 0 or s <= 0:
            return self.values[0]
        if s >= k_max:
            return self.values[k_max]
        k = int(math.floor(s))
        theta = s - k
        if self.interp == "hold" or theta < 1e-12:
            return self.values[k]
        if theta > 1 - 1e-12:
            return self.values[k + 1]
        return (1.0 - theta) * self.values[k] + theta * self.values[k + 1]


@dataclass(frozen=True)
class CFLResult:
    ok: bool
    max_stable_dt: float

    def __bool__(self):
        return self.ok


def _stability_rate(v: np.ndarray | None, d: np.ndarray | None, grid: Grid3) -> np.ndarray:
    rate = np.zeros(grid.dims)
    for a, (n, h) in enumerate(zip(grid.dims, grid.spacing)):
        if n == 1:
            continue  # inert axis
        if v is not None:
            rate += np.abs(v[a]) / h
        if d is not None:
            rate += 2.0 * np.abs(d) / h**2
    return rate


def cfl_check(v, d, grid: Grid3, dt: float, safety: float = 0.8, mask: DomainMask | None = None) -> CFLResult:
    """``dt <= safety / max(sum|V_i|/h_i + 2 D sum 1/h_i^2)``.

    Axes of size one carry no stencil and are left out of the sums.  With a
    mask, only active voxels count.
    """
    vv = None if v is None else (v.values if isinstance(v, VectorField) else np.asarray(v))
    dd = None if d is None else (d.values if isinstance(d, ScalarField) else np.asarray(d))
    rate = _stability_rate(vv, dd, grid)
    if mask is not None:
        rate = np.where(mask.active, rate, 0.0)
    peak = float(rate.max()) if rate.size else 0.0
    max_dt = math.inf if peak == 0 else safety / peak
    return CFLResult(dt <= max_dt, max_dt)


def _check_grid(*fields):
    grids = {f.grid for f in fields if f is not None}
    if len(grids) > 1:
        raise GridMismatchError("fields live on different grids")


def advect_upwind(c: ScalarField, v: VectorField) -> ScalarField:
    """``-V . grad C`` with first-order upwinding; array edges act as walls."""
    _check_grid(c, v)
    ones = np.ones(c.grid.dims, dtype=np.uint8)
    out = kernels.rhs(np.ascontiguousarray(c.values), np.ascontiguousarray(v.values), np.zeros(c.grid.dims),
                      ones, ones, c.grid.spacing, False, True, False)
    return ScalarField(c.grid, out)


def diffuse(c: ScalarField, d: ScalarField, face_rule: str = "mean") -> ScalarField:
    """``div(D grad C)`` in flux form with zero flux through the array edges."""
    _check_grid(c, d)
    ones = np.ones(c.grid.dims, dtype=np.uint8)
    out = kernels.rhs(np.ascontiguousarray(c.values), np.zeros((3,) + c.grid.dims), np.ascontiguousarray(d.values),
                      ones, ones, c.grid.spacing, face_rule == "nested", False, True)
    return ScalarField(c.grid, out)


def apply_bc(rate: ScalarField, state: ScalarField, mask: DomainMask, bd: BoundaryData, t: float):
    """Impose the mixed boundary condition on a (rate, state) pair.

    Slab voxels get zero rate and the measured value at ``t``; outside
    voxels get zero rate and zero state.  The Neumann condition lives in the
    stencils (missing faces carry no flux), so contour voxels pass through.
    """
    _check_grid(rate, state, mask)
    r = np.where(mask.active, rate.values, 0.0)
    s = np.where(mask.inside, state.values, 0.0)
    s.reshape(-1)[bd.index] = bd.at(t)
    return ScalarField(rate.grid, r), ScalarField(state.grid, s)


class Propagator:
    """Fixed-step explicit Runge-Kutta integration of the masked system.

    Holds the frozen fields, mask metadata and kernel backend, so one
    instance serves both the forward sweep and the adjoint sweep.
    """

    def __init__(self, v: np.ndarray, d: np.ndarray, mask: DomainMask, cfg: SolverConfig,
                 bd: BoundaryData | None = None, backend=None):
        g = mask.grid
        self.grid = g
        self.cfg = cfg
        self.mask = mask
        self.v = np.ascontiguousarray(v if v is not None else np.zeros((3,) + g.dims), dtype=np.float64)
        self.d = np.ascontiguousarray(d if d is not None else np.zeros(g.dims), dtype=np.float64)
        self.adv = cfg.mode.advects
        self.dif = cfg.mode.diffuses
        if not self.adv:
            self.v = np.zeros((3,) + g.dims)
        if not self.dif:
            self.d = np.zeros(g.dims)
        self.inside = np.ascontiguousarray(mask.inside, dtype=np.uint8)
        self.active_u8 = np.ascontiguousarray(mask.active, dtype=np.uint8)
        self.active = mask.active
        self.k = backend or kernels
        self.nb = self.k.face_bits(self.inside)
        self.nested = cfg.face_rule == "nested"
        self.tab = TABLEAUS[cfg.integrator]
        self.bd = bd if bd is not None else BoundaryData.constant(np.zeros(g.dims), mask)
        self.last_error_estimate = 0.0
        self.stage_budget = 512 * 2**20

    def check_cfl(self, iteration=None) -> CFLResult:
        res = cfl_check(self.v if self.adv else None, self.d if self.dif else None, self.grid,
                        self.cfg.dt, self.cfg.cfl_safety, self.mask)
        if not res.ok:
            raise CFLError(self.cfg.dt, res.max_stable_dt, iteration)
        return res

    def f(self, y, out=None):
        return self.k.rhs(y, self.v, self.d, self.inside, self.active_u8, self.grid.spacing,
                          self.nested, self.adv, self.dif, out, self.nb)

    def _clamp(self, y, t):
        y.reshape(-1)[self.bd.index] = self.bd.at(t)
        return y

    def initial_state(self, c0: np.ndarray, t0: float = 0.0) -> np.ndarray:
        y = np.where(self.mask.inside, np.asarray(c0, dtype=np.float64), 0.0)
        return self._clamp(np.ascontiguousarray(y), t0)

    def _stages(self, c, t):
        """Stage states and slopes of one step from state ``c`` at time ``t``."""
        dt = self.cfg.dt
        tab = self.tab
        base = np.where(self.active, c, 0.0)
        ys, ks = [], []
        for i, ci in enumerate(tab.c):
            if i == 0:
                y = c
            else:
                y = base.copy()
                for aij, kj in zip(tab.a[i], ks):
                    if aij != 0.0:
                        y += (dt * aij) * kj
                self._clamp(y, t + ci * dt)
            ys.append(y)
            ks.append(self.f(y))
        return ys, ks

    def step(self, c, t, stages_out=None):
        dt = self.cfg.dt
        ys, ks = self._stages(c, t)
        if stages_out is not None:
            stages_out.extend(ys)
        out = np.where(self.active, c, 0.0)
        for bi, ki in zip(self.tab.b, ks):
            if bi != 0.0:
                out += (dt * bi) * ki
        if self.tab.b_err is not None:
            err = sum((dt * e) * k for e, k in zip(self.tab.b_err, ks) if e != 0.0)
            self.last_error_estimate = float(np.max(np.abs(err))) if np.size(err) else 0.0
        return self._clamp(out, t + dt)

    def run(self, c0, n_steps: int, record_every: int, t0: float = 0.0, keep=False):
        """Integrate ``n_steps``; return recorded frames (including the start)
        and, with ``keep``, a checkpoint per step for :meth:`backward`.

        A checkpoint is the state before the step plus, when the whole
        sweep fits in ``stage_budget`` bytes, the stage states of the step
        (otherwise they are recomputed on the way back).
        """
        c = self.initial_state(c0, t0)
        frames = [c.copy()]
        checkpoints = [] if keep else None
        store = keep and n_steps * len(self.tab.c) * c.nbytes <= self.stage_budget
        err = 0.0
        for n in range(n_steps):
            ys = [] if store else None
            if keep:
                checkpoints.append((c, ys))
            c = self.step(c, t0 + n * self.cfg.dt, ys)
            err = max(err, self.last_error_estimate)
            if (n + 1) % record_every == 0:
                frames.append(c.copy())
        self.max_error_estimate = err
        return frames, checkpoints

    def backward(self, checkpoints, frame_bars: dict, record_every: int, t0: float = 0.0,
                 want_v=True, want_d=True):
        """Reverse sweep.

        ``frame_bars[m]`` is the loss cotangent on recorded frame ``m``
        (frame 0 is the initial state).  Returns cotangents on the initial
        state, the velocity and the diffusivity.
        """
        dt = self.cfg.dt
        tab = self.tab
        s = len(tab.c)
        g = self.grid
        vbar = np.zeros((3,) + g.dims) if (want_v and self.adv) else None
        dbar = np.zeros(g.dims) if (want_d and self.dif) else None
        lam = np.zeros(g.dims)
        n_steps = len(checkpoints)
        for n in range(n_steps - 1, -1, -1):
            m = (n + 1) // record_every if (n + 1) % record_every == 0 else None
            if m is not None and m in frame_bars:
                lam += frame_bars[m]
            lam_a = np.where(self.active, lam, 0.0)
            c, ys = checkpoints[n]
            if ys is None:
                ys, _ = self._stages(c, t0 + n * dt)
            kbars = [(dt * tab.b[i]) * lam_a for i in range(s)]
            new_lam = lam_a.copy()
            for i in range(s - 1, -1, -1):
                kb = kbars[i]
                if not kb.any():
                    continue
                ybar = np.zeros(g.dims)
                self.k.rhs_vjp(ys[i], self.v, self.d, self.inside, self.active_u8, g.spacing, self.nested,
                               self.adv, self.dif, np.ascontiguousarray(kb), ybar, vbar, dbar, self.nb)
                ybar = np.where(self.active, ybar, 0.0)
                new_lam += ybar
                for j, aij in enumerate(tab.a[i]):
                    if aij != 0.0:
                        kbars[j] = kbars[j] + (dt * aij) * ybar
            lam = new_lam
        if 0 in frame_bars:
            lam += frame_bars[0]
        return lam, vbar, dbar


def _steps(span: float, dt: float, what: str) -> int:
    n = int(round(span / dt))
    if n < 0 or abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ValidationError(f"{what} ({span:g} s) must be an integer multiple of dt ({dt:g} s)")
    return n


def integrate(c0: ScalarField, v: VectorField | None, d: ScalarField | None, mask: DomainMask,
              bd: BoundaryData | None, cfg: SolverConfig, t_span: float, record_every: float) -> VolumeSeries:
    """Integrate from ``c0`` over ``t_span`` seconds, recording every ``record_every`` seconds.

    Raises :class:`CFLError` before taking any step when ``cfg.dt`` is
    unstable for ``(v, d)``.
    """
    _check_grid(c0, v, d, mask)
    per = _steps(record_every, cfg.dt, "record_every")
    if per == 0:
        raise ValidationError("record_every must be positive")
    n_steps = _steps(t_span, cfg.dt, "t_span")
    if n_steps % per:
        raise ValidationError("t_span must be a multiple of record_every")
    prop = Propagator(None if v is None else v.values, None if d is None else d.values, mask, cfg, bd)
    prop.check_cfl()
    frames, _ = prop.run(c0.values, n_steps, per)
    meta = {"solver": {"dt": cfg.dt, "integrator": cfg.integrator.value, "mode": cfg.mode.value,
                       "face_rule": cfg.face_rule, "max_error_estimate": getattr(prop, "max_error_estimate", 0.0)}}
    return VolumeSeries(c0.grid, record_every, np.stack(frames), meta)
