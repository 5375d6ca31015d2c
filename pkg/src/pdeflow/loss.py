"""Training loss and its exact gradient with respect to the free parameters.

The loss is the collocation mismatch between predicted and measured frames
plus edge-aware smoothness penalties on V and D.  The edge weights
(``alpha``) and their scale ``k`` are recomputed from the current fields on
every call but held constant for differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import VolumeSeries
from .errors import GridMismatchError, ValidationError
from .fields import DiffusivityParamIso, Potentials, cross_gradients, cross_gradients_vjp
from .grid import DomainMask, ScalarField, Scheme, VectorField, _smooth_array, d_axis, d_axis_T
from .solver import BoundaryData, Mode, Propagator, SolverConfig, _steps

__all__ = [
    "LossConfig",
    "LossBreakdown",
    "ParamGradients",
    "TrainingSample",
    "Alphas",
    "loss_cc",
    "pm_k",
    "smoothness_terms",
    "total_loss",
    "loss_gradients",
]

K_FLOOR = np.finfo(np.float64).eps


@dataclass(frozen=True)
class LossConfig:
    lambda_v: float = 0.1
    lambda_d: float = 0.1
    sigma: float = 0.6
    hist_bins: int = 256
    smooth_edge: str = "reflect"
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.lambda_v < 0 or self.lambda_d < 0:
            raise ValidationError("regularization weights must be >= 0")
        if self.sigma < 0:
            raise ValidationError("sigma must be >= 0")
        if self.hist_bins < 1:
            raise ValidationError("hist_bins must be >= 1")

    @property
    def mode(self) -> Mode:
        return self.solver.mode


@dataclass(frozen=True)
class LossBreakdown:
    l_cc: float
    l_as_v: float
    l_as_d: float
    total: float
    lambda_v: float
    lambda_d: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("l_cc", "l_as_v", "l_as_d", "total", "lambda_v", "lambda_d")}


@dataclass(frozen=True, eq=False)
class ParamGradients:
    d_gamma1: ScalarField
    d_gamma2: ScalarField
    d_l: ScalarField


@dataclass(frozen=True, eq=False)
class Alphas:
    """Lagged edge weights and their histogram scales for one iteration."""

    alpha_v: np.ndarray
    alpha_d: np.ndarray
    k_v: float
    k_d: float


@dataclass(eq=False)
class TrainingSample:
    """Frames ``start .. start + t_pd`` of a measured series."""

    series: VolumeSeries
    start: int = 0

    @property
    def t_pd(self) -> int:
        return self.series.T


def _loss_config(cfg) -> LossConfig:
    if isinstance(cfg, LossConfig):
        return cfg
    if hasattr(cfg, "loss_config"):
        return cfg.loss_config()
    raise ValidationError(f"cannot derive a loss configuration from {type(cfg).__name__}")


def _inside(mask) -> np.ndarray:
    return mask.inside if isinstance(mask, DomainMask) else np.asarray(mask, dtype=bool)


def loss_cc(predicted: VolumeSeries, measured: VolumeSeries, mask) -> float:
    """Mean over frames ``1..T`` of the in-mask mean squared mismatch."""
    if len(predicted) != len(measured):
        raise ValidationError(f"frame counts differ: {len(predicted)} vs {len(measured)}")
    if len(predicted) < 2:
        raise ValidationError("need at least two frames (frame 0 is the shared initial state)")
    if predicted.grid != measured.grid:
        raise GridMismatchError("predicted and measured series live on different grids")
    inside = _inside(mask)
    diff = (predicted.frames[1:] - measured.frames[1:])[:, inside]
    return float(np.mean(np.mean(diff**2, axis=1)))


def _grad_norm_sq(f: np.ndarray, spacing) -> np.ndarray:
    return sum(d_axis(f, a, spacing[a], Scheme.CENTRAL) ** 2 for a in range(3))


def _hist_k(mags: np.ndarray, bins: int) -> float:
    mags = mags[np.isfinite(mags)]
    top = float(mags.max()) if mags.size else 0.0
    if top <= 0:
        return K_FLOOR
    counts, edges = np.histogram(mags, bins=bins, range=(0.0, top))
    cum = np.cumsum(counts) / mags.size
    i = int(np.searchsorted(cum, 0.9 - 1e-12))
    return max(float(edges[min(i, bins - 1) + 1]), K_FLOOR)


def pm_k(f, mask, bins: int = 256) -> float:
    """Edge-scale ``k``: 90th-percentile bin edge of the in-mask gradient magnitude.

    ``f`` may be a single field or a sequence of fields on the same grid;
    the magnitudes of all of them are pooled into one histogram.
    """
    fields = f if isinstance(f, (list, tuple)) else [f]
    inside = _inside(mask)
    mags = []
    for fi in fields:
        mags.append(np.sqrt(_grad_norm_sq(fi.values, fi.grid.spacing))[inside])
    return _hist_k(np.concatenate(mags), bins)


def _alphas(v: np.ndarray | None, d: np.ndarray | None, inside, spacing, sigma, bins, edge,
            k_v: float | None = None, k_d: float | None = None) -> Alphas:
    shape = inside.shape
    if v is not None:
        sq = [_grad_norm_sq(_smooth_array(v[a], sigma, edge), spacing) for a in range(3)]
        if k_v is None:
            k_v = _hist_k(np.concatenate([np.sqrt(s[inside]) for s in sq]), bins)
        alpha_v = sum(np.exp(-s / k_v) for s in sq) / 3.0
    else:
        k_v, alpha_v = K_FLOOR, np.ones(shape)
    if d is not None:
        sq = _grad_norm_sq(_smooth_array(d, sigma, edge), spacing)
        if k_d is None:
            k_d = _hist_k(np.sqrt(sq[inside]), bins)
        alpha_d = np.exp(-sq / k_d)
    else:
        k_d, alpha_d = K_FLOOR, np.ones(shape)
    return Alphas(alpha_v, alpha_d, k_v, k_d)


def _weighted_seminorm(f: np.ndarray, weight: np.ndarray, inside, n: int, spacing, want_grad: bool):
    """``mean_mask(weight * |grad f|^2)`` and its gradient in ``f``."""
    parts = [d_axis(f, a, spacing[a], Scheme.CENTRAL) for a in range(3)]
    w = np.where(inside, weight, 0.0)
    value = float(np.sum(w * sum(p**2 for p in parts))) / n
    if not want_grad:
        return value, None
    grad = sum(d_axis_T((2.0 / n) * w * parts[a], a, spacing[a], Scheme.CENTRAL) for a in range(3))
    return value, grad


def smoothness_terms(v: VectorField, d: ScalarField, sigma: float, k_v: float | None, k_d: float | None, mask,
                     bins: int = 256, edge: str = "reflect"):
    """Edge-aware smoothness penalties and their weights.

    Returns ``(l_as_v, l_as_d, alpha_v, alpha_d)``.  ``k_v`` or ``k_d`` set
    to None is estimated with :func:`pm_k` on the smoothed fields, pooling
    the three velocity components.
    """
    if v.grid != d.grid:
        raise GridMismatchError("velocity and diffusivity live on different grids")
    inside = _inside(mask)
    sp = v.grid.spacing
    a = _alphas(v.values, d.values, inside, sp, sigma, bins, edge, k_v, k_d)
    n = max(int(inside.sum()), 1)
    l_v = sum(_weighted_seminorm(v.values[i], a.alpha_v, inside, n, sp, False)[0] for i in range(3))
    l_d = _weighted_seminorm(d.values, a.alpha_d, inside, n, sp, False)[0]
    g = v.grid
    return l_v, l_d, ScalarField(g, a.alpha_v), ScalarField(g, a.alpha_d)


def _unpack(params):
    if isinstance(params, dict):
        pot, dif = params["potentials"], params["diffusivity"]
    else:
        pot, dif = params
    if not isinstance(pot, Potentials) or not isinstance(dif, DiffusivityParamIso):
        raise ValidationError("params must be (Potentials, DiffusivityParamIso)")
    if pot.grid != dif.grid:
        raise GridMismatchError("potentials and diffusivity live on different grids")
    return pot.gamma1.values, pot.gamma2.values, dif.l.values


class _Evaluation:
    """Forward pass over one sample, kept around for the backward pass."""

    def __init__(self, sample: TrainingSample, mask: DomainMask, g1, g2, l, cfg: LossConfig, alphas=None,
                 backend=None):
        series = sample.series
        grid = series.grid
        if mask.grid != grid:
            raise GridMismatchError("mask and sample live on different grids")
        if series.T < 1:
            raise ValidationError("a training sample needs at least two frames")
        self.grid, self.mask, self.cfg, self.series = grid, mask, cfg, series
        mode = cfg.mode
        sp = grid.spacing
        self.g1, self.g2, self.l = g1, g2, l
        self.v = cross_gradients(g1, g2, sp) if mode.advects else None
        self.d = np.square(l) if mode.diffuses else None
        self.per = _steps(series.dt_frames, cfg.solver.dt, "frame interval")
        if self.per == 0:
            raise ValidationError("frame interval must be positive")
        bd = BoundaryData.from_series(series, mask, interp=cfg.solver.boundary_interp)
        self.prop = Propagator(self.v, self.d, mask, cfg.solver, bd, backend)
        self.prop.check_cfl()
        frames, self.checkpoints = self.prop.run(series.frames[0], series.T * self.per, self.per, keep=True)
        self.pred = np.stack(frames)

        inside = mask.inside
        self.inside = inside
        self.n = max(int(inside.sum()), 1)
        diff = (self.pred[1:] - series.frames[1:])[:, inside]
        self.resid = self.pred[1:] - series.frames[1:]
        self.l_cc = float(np.mean(np.mean(diff**2, axis=1)))

        self.alphas = alphas or _alphas(self.v, self.d, inside, sp, cfg.sigma, cfg.hist_bins, cfg.smooth_edge)
        lam_v = cfg.lambda_v if mode.advects else 0.0
        lam_d = cfg.lambda_d if mode.diffuses else 0.0
        self.lam_v, self.lam_d = lam_v, lam_d
        self.l_as_v = 0.0
        self.l_as_d = 0.0
        self._reg_vbar = None
        self._reg_dbar = None
        if self.v is not None:
            for a in range(3):
                val, grad = _weighted_seminorm(self.v[a], self.alphas.alpha_v, inside, self.n, sp, True)
                self.l_as_v += val
                if self._reg_vbar is None:
                    self._reg_vbar = np.zeros_like(self.v)
                self._reg_vbar[a] = grad
        if self.d is not None:
            self.l_as_d, self._reg_dbar = _weighted_seminorm(self.d, self.alphas.alpha_d, inside, self.n, sp, True)

    def breakdown(self) -> LossBreakdown:
        total = self.l_cc + self.lam_v * self.l_as_v + self.lam_d * self.l_as_d
        return LossBreakdown(self.l_cc, self.l_as_v, self.l_as_d, total, self.cfg.lambda_v, self.cfg.lambda_d)

    def gradients(self):
        t_pd = self.series.T
        scale = 2.0 / (self.n * t_pd)
        bars = {m: np.where(self.inside, scale * self.resid[m - 1], 0.0) for m in range(1, t_pd + 1)}
        _, vbar, dbar = self.prop.backward(self.checkpoints, bars, self.per)
        sp = self.grid.spacing
        g1bar = np.zeros(self.grid.dims)
        g2bar = np.zeros(self.grid.dims)
        lbar = np.zeros(self.grid.dims)
        if self.v is not None:
            vbar = vbar + self.lam_v * self._reg_vbar
            g1bar, g2bar = cross_gradients_vjp(self.g1, self.g2, vbar, sp)
        if self.d is not None:
            dbar = dbar + self.lam_d * self._reg_dbar
            lbar = 2.0 * self.l * dbar
        keep = self.inside
        return tuple(np.where(keep, x, 0.0) for x in (g1bar, g2bar, lbar))


def total_loss(sample: TrainingSample, params, cfg, mask: DomainMask, alphas: Alphas | None = None) -> LossBreakdown:
    """Integrate over the sample window and assemble the loss terms.

    ``alphas`` freezes the edge weights (e.g. at the values of a previous
    evaluation); by default they are computed from ``params``.
    """
    g1, g2, l = _unpack(params)
    return _Evaluation(sample, mask, g1, g2, l, _loss_config(cfg), alphas).breakdown()


def loss_gradients(sample: TrainingSample, params, cfg, mask: DomainMask, alphas: Alphas | None = None,
                   return_alphas: bool = False):
    """Loss terms and exact gradients in ``(gamma1, gamma2, l)``.

    Gradients are taken with the edge weights held fixed and are zeroed
    outside the mask.  Returns ``(LossBreakdown, ParamGradients)``, plus the
    :class:`Alphas` used when ``return_alphas`` is set.
    """
    g1, g2, l = _unpack(params)
    ev = _Evaluation(sample, mask, g1, g2, l, _loss_config(cfg), alphas)
    grid = ev.grid
    dg1, dg2, dl = ev.gradients()
    grads = ParamGradients(ScalarField(grid, dg1), ScalarField(grid, dg2), ScalarField(grid, dl))
    if return_alphas:
        return ev.breakdown(), grads, ev.alphas
    return ev.breakdown(), grads
