"""Lesion versus contralateral statistics and recovery errors."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, UndefinedMetricError, ValidationError
from .grid import DomainMask, ScalarField

__all__ = [
    "MidlineAxis",
    "RegionPair",
    "mirror_mask",
    "rel_mean",
    "rel_std",
    "abs_t",
    "mae_maxnorm",
    "region_metrics",
    "METRIC_HEADER",
]


class MidlineAxis(str, enum.Enum):
    X = "x"
    Y = "y"

    @property
    def index(self) -> int:
        return 0 if self is MidlineAxis.X else 1


@dataclass(frozen=True, eq=False)
class RegionPair:
    lesion: np.ndarray
    c_lesion: np.ndarray
    midline_axis: MidlineAxis
    midline_index: int
    dropped: int = 0

    def __post_init__(self):
        if self.lesion.shape != self.c_lesion.shape:
            raise GridMismatchError("lesion and c-lesion masks differ in shape")
        if not self.lesion.any() or not self.c_lesion.any():
            raise ValidationError("lesion and c-lesion must both be nonempty")
        if np.any(self.lesion & self.c_lesion):
            raise ValidationError("lesion and c-lesion overlap")


def _mirror(mask: np.ndarray, axis: int, m: int):
    out = np.zeros_like(mask, dtype=bool)
    idx = np.nonzero(mask)
    target = 2 * m - idx[axis]
    ok = (target >= 0) & (target < mask.shape[axis])
    moved = list(idx)
    moved[axis] = target
    out[tuple(i[ok] for i in moved)] = True
    return out, int((~ok).sum())


def mirror_mask(lesion, midline_axis, midline_index: int, domain=None) -> RegionPair:
    """Reflect ``lesion`` across the plane ``axis = midline_index``.

    Reflections that fall off the array or outside ``domain`` are dropped
    and counted in ``RegionPair.dropped``.
    """
    axis = MidlineAxis(midline_axis)
    les = np.asarray(lesion.values if isinstance(lesion, ScalarField) else lesion, dtype=bool)
    mirrored, dropped = _mirror(les, axis.index, int(midline_index))
    if domain is not None:
        inside = domain.inside if isinstance(domain, DomainMask) else np.asarray(domain, dtype=bool)
        if inside.shape != les.shape:
            raise GridMismatchError("domain and lesion differ in shape")
        dropped += int((mirrored & ~inside).sum())
        mirrored &= inside
    return RegionPair(les, mirrored, axis, int(midline_index), dropped)


def _samples(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise UndefinedMetricError("empty region")
    return a, b


def rel_mean(values_lesion, values_clesion) -> float:
    """``min(m_l / m_c, m_c / m_l)``; both means must be positive."""
    a, b = _samples(values_lesion, values_clesion)
    ma, mb = a.mean(), b.mean()
    if not (ma > 0 and mb > 0):
        raise UndefinedMetricError(f"relative mean needs positive means, got {ma:g} and {mb:g}")
    return float(min(ma / mb, mb / ma))


def rel_std(values_lesion, values_clesion) -> float:
    """``min(s_l / s_c, s_c / s_l)`` with sample standard deviations."""
    a, b = _samples(values_lesion, values_clesion)
    if a.size < 2 or b.size < 2:
        raise UndefinedMetricError("sample standard deviation needs at least two values per region")
    sa, sb = a.std(ddof=1), b.std(ddof=1)
    if not (sa > 0 and sb > 0):
        raise UndefinedMetricError("relative STD is undefined for a constant region")
    return float(min(sa / sb, sb / sa))


def abs_t(values_lesion, values_clesion, welch: bool = False) -> float:
    """Absolute two-sample t statistic (pooled variance unless ``welch``).

    Distinct means with zero spread give ``inf`` (degenerate separation);
    identical constant samples give 0.
    """
    a, b = _samples(values_lesion, values_clesion)
    na, nb = a.size, b.size
    diff = abs(a.mean() - b.mean())
    va = a.var(ddof=1) if na > 1 else 0.0
    vb = b.var(ddof=1) if nb > 1 else 0.0
    if welch:
        se2 = va / na + vb / nb
    else:
        if na + nb < 3:
            raise UndefinedMetricError("pooled t needs at least three values in total")
        sp2 = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
        se2 = sp2 * (1.0 / na + 1.0 / nb)
    if diff == 0:
        return 0.0
    if se2 <= 0:
        return math.inf
    return float(diff / math.sqrt(se2))


def mae_maxnorm(est, gt, mask=None) -> float:
    """Mean over the mask of ``|est - gt|`` divided by ``max(gt)`` over the mask."""
    e = np.asarray(est.values if isinstance(est, ScalarField) else est, dtype=np.float64)
    g = np.asarray(gt.values if isinstance(gt, ScalarField) else gt, dtype=np.float64)
    if e.shape != g.shape:
        raise GridMismatchError("estimate and ground truth differ in shape")
    if mask is None:
        sel = np.ones(g.shape, dtype=bool)
    else:
        sel = mask.inside if isinstance(mask, DomainMask) else np.asarray(mask, dtype=bool)
    if not sel.any():
        raise UndefinedMetricError("empty mask")
    top = float(g[sel].max())
    if top == 0:
        raise UndefinedMetricError("ground truth maximum is zero")
    return float(np.mean(np.abs(e[sel] - g[sel])) / top)


METRIC_HEADER = ["map", "rel_mean", "rel_std", "abs_t", "n_lesion", "n_clesion"]


def region_metrics(name: str, field, pair: RegionPair, welch: bool = False) -> list:
    """One CSV row of :data:`METRIC_HEADER`; undefined metrics become NaN."""
    f = np.asarray(field.values if isinstance(field, ScalarField) else field, dtype=np.float64)
    a, b = f[pair.lesion], f[pair.c_lesion]
    finite_a, finite_b = a[np.isfinite(a)], b[np.isfinite(b)]
    row = [name]
    for fn in (rel_mean, rel_std, lambda x, y: abs_t(x, y, welch)):
        try:
            row.append(fn(finite_a, finite_b))
        except UndefinedMetricError:
            row.append(math.nan)
    return row + [int(a.size), int(b.size)]
