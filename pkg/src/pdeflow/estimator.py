"""Fit velocity and diffusivity fields to a concentration series.

Each iteration draws a random window of ``t_pd + 1`` frames, integrates the
model from its first frame, and takes one momentum-SGD step on the
potentials and the square-root diffusivity.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import VolumeSeries
from .errors import CFLError, GridMismatchError, ValidationError
from .fields import (
    DiffusivityParamIso,
    Potentials,
    diffusivity_iso,
    velocity_from_potentials,
)
from .grid import DomainMask, Grid3, ScalarField, VectorField
from .loss import LossBreakdown, LossConfig, TrainingSample, loss_gradients
from .solver import BoundaryData, Integrator, Mode, Propagator, SolverConfig, _steps

__all__ = [
    "EstimatorConfig",
    "FitResult",
    "TrainingSample",
    "init_params",
    "select_sample",
    "fit",
    "predict_series",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorConfig:
    lambda_v: float = 0.1
    lambda_d: float = 0.1
    sigma: float = 0.6
    dt: float = 0.02
    t_pd: int | None = None  # None: floor(T / 3)
    lr: float = 1e-3
    momentum: float = 0.9
    init_scale: float = 0.001
    init_scale_d: float | None = None  # None: init_scale
    lr_d: float | None = None  # None: lr
    conv_rel_tol: float = 0.001
    conv_patience: int = 10
    max_iters: int = 2000
    rng_seed: int = 0
    mode: Mode = Mode.ADVECTION_DIFFUSION
    integrator: Integrator = Integrator.RK45
    cfl_safety: float = 0.8
    face_rule: str = "mean"
    boundary_interp: str = "linear"
    hist_bins: int = 256
    smooth_edge: str = "reflect"

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if self.lr < 0:
            raise ValidationError("lr must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.init_scale < 0 or (self.init_scale_d is not None and self.init_scale_d < 0):
            raise ValidationError("init_scale must be >= 0")
        if self.lr_d is not None and self.lr_d < 0:
            raise ValidationError("lr_d must be >= 0")
        if self.conv_rel_tol <= 0:
            raise ValidationError("conv_rel_tol must be > 0")
        if self.conv_patience < 1:
            raise ValidationError("conv_patience must be >= 1")
        if self.max_iters < 0:
            raise ValidationError("max_iters must be >= 0")
        if self.t_pd is not None and self.t_pd < 1:
            raise ValidationError("t_pd must be >= 1")
        self.loss_config()  # validates the remaining knobs

    def solver_config(self) -> SolverConfig:
        return SolverConfig(dt=self.dt, cfl_safety=self.cfl_safety, mode=self.mode, integrator=self.integrator,
                            face_rule=self.face_rule, boundary_interp=self.boundary_interp)

    def loss_config(self) -> LossConfig:
        return LossConfig(lambda_v=self.lambda_v, lambda_d=self.lambda_d, sigma=self.sigma,
                          hist_bins=self.hist_bins, smooth_edge=self.smooth_edge, solver=self.solver_config())

    def resolve_t_pd(self, T: int) -> int:
        t_pd = self.t_pd if self.t_pd is not None else T // 3
        if t_pd < 1 or t_pd > T:
            raise ValidationError(f"t_pd={t_pd} is not in [1, {T}] for a series with T={T}")
        return t_pd

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["mode"] = self.mode.value
        out["integrator"] = self.integrator.value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown estimator settings: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class FitResult:
    potentials: Potentials
    diffus_param: DiffusivityParamIso
    v: VectorField
    d: ScalarField
    loss_history: list[LossBreakdown]
    iterations: int
    converged: bool
    sample_starts: list[int] = field(default_factory=list)

    def manifest(self, cfg: EstimatorConfig) -> dict:
        """JSON-ready record of the run (config, seed, loss curve, convergence)."""
        return {
            "config": cfg.to_dict(),
            "seed": cfg.rng_seed,
            "iterations": self.iterations,
            "converged": self.converged,
            "sample_starts": list(self.sample_starts),
            "loss_history": [b.as_dict() for b in self.loss_history],
        }


def _streams(seed: int):
    init_ss, sample_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(sample_ss)


def init_params(grid: Grid3, mask: DomainMask, seed: int, scale: float = 0.001, scale_d: float | None = None):
    """Draw ``gamma1``, ``gamma2`` and ``L`` i.i.d. from ``scale * N(0, 1)`` inside the mask.

    ``scale_d`` overrides the scale of ``L``.
    """
    if mask.grid != grid:
        raise GridMismatchError("mask lives on a different grid")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    inside = mask.inside
    out = []
    for s in (scale, scale, scale if scale_d is None else scale_d):
        a = np.zeros(grid.dims)
        a[inside] = s * rng.standard_normal(int(inside.sum()))
        out.append(ScalarField(grid, a))
    return Potentials(out[0], out[1]), DiffusivityParamIso(out[2])


def select_sample(series: VolumeSeries, t_pd: int, rng: np.random.Generator) -> TrainingSample:
    """Uniformly random window of ``t_pd + 1`` consecutive frames."""
    T = series.T
    if t_pd < 1 or t_pd > T:
        raise ValidationError(f"t_pd={t_pd} needs 1 <= t_pd <= T={T}")
    start = int(rng.integers(0, T - t_pd + 1))
    return TrainingSample(series.window(start, t_pd + 1), start)


def fit(series: VolumeSeries, mask: DomainMask, cfg: EstimatorConfig, callback=None) -> FitResult:
    """Momentum-SGD estimation of (V, D) from ``series``.

    Converges when the relative change of the sampled total loss stays
    below ``conv_rel_tol`` for ``conv_patience`` consecutive iterations.
    ``callback(iteration, breakdown)`` is called after every step.

    Raises :class:`CFLError` carrying the iteration number if the current
    fields violate the stability bound for ``cfg.dt``.
    """
    if mask.grid != series.grid:
        raise GridMismatchError("mask and series live on different grids")
    grid = series.grid
    t_pd = cfg.resolve_t_pd(series.T)
    lcfg = cfg.loss_config()
    _steps(series.dt_frames, cfg.dt, "frame interval")
    init_rng, sample_rng = _streams(cfg.rng_seed)
    pot, dif = init_params(grid, mask, init_rng, cfg.init_scale, cfg.init_scale_d)
    theta = [pot.gamma1.values.copy(), pot.gamma2.values.copy(), dif.l.values.copy()]
    # a parameter the model does not use stays at zero
    if not cfg.mode.advects:
        theta[0][:] = 0.0
        theta[1][:] = 0.0
    if not cfg.mode.diffuses:
        theta[2][:] = 0.0
    update = [cfg.mode.advects, cfg.mode.advects, cfg.mode.diffuses]
    lr = [cfg.lr, cfg.lr, cfg.lr if cfg.lr_d is None else cfg.lr_d]
    vel = [np.zeros(grid.dims) for _ in range(3)]
    inside = mask.inside

    history: list[LossBreakdown] = []
    starts: list[int] = []
    calm = 0
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        sample = select_sample(series, t_pd, sample_rng)
        params = (Potentials(ScalarField(grid, theta[0]), ScalarField(grid, theta[1])),
                  DiffusivityParamIso(ScalarField(grid, theta[2])))
        try:
            br, grads = loss_gradients(sample, params, lcfg, mask)
        except CFLError as e:
            raise CFLError(e.dt, e.max_stable_dt, it) from None
        if not math.isfinite(br.total):
            raise CFLError(cfg.dt, float("nan"), it)
        for i, g in enumerate((grads.d_gamma1, grads.d_gamma2, grads.d_l)):
            if not update[i]:
                continue
            vel[i] = cfg.momentum * vel[i] + g.values
            theta[i] = np.where(inside, theta[i] - lr[i] * vel[i], 0.0)
        if history:
            prev = history[-1].total
            rel = abs(br.total - prev) / prev if prev > 0 else (0.0 if br.total == 0 else math.inf)
            calm = calm + 1 if rel < cfg.conv_rel_tol else 0
        history.append(br)
        starts.append(sample.start)
        if callback is not None:
            callback(it, br)
        if it % 50 == 0:
            log.info("iter %d  total %.6g  l_cc %.6g", it, br.total, br.l_cc)
        if calm >= cfg.conv_patience:
            converged = True
            break

    pot = Potentials(ScalarField(grid, theta[0]), ScalarField(grid, theta[1]))
    dif = DiffusivityParamIso(ScalarField(grid, theta[2]))
    return FitResult(pot, dif, velocity_from_potentials(pot), diffusivity_iso(dif), history,
                     len(history), converged, starts)


def predict_series(fit: FitResult, c0, mask: DomainMask, bd: BoundaryData, cfg: EstimatorConfig, T: int,
                   dt_frames: float | None = None) -> VolumeSeries:
    """Integrate the fitted model from ``c0`` over ``T`` frame intervals.

    Frames are recorded every ``dt_frames`` seconds (default: the frame
    spacing of the boundary data).
    """
    if T < 0:
        raise ValidationError("T must be >= 0")
    c0v = c0.values if isinstance(c0, ScalarField) else np.asarray(c0, dtype=np.float64)
    dt_frames = bd.dt_frames if dt_frames is None else dt_frames
    scfg = cfg.solver_config()
    per = _steps(dt_frames, scfg.dt, "frame interval")
    prop = Propagator(fit.v.values, fit.d.values, mask, scfg, bd)
    if T > 0:
        prop.check_cfl()
    frames, _ = prop.run(c0v, T * per, per)
    return VolumeSeries(mask.grid, dt_frames, np.stack(frames), {"predicted": True})
