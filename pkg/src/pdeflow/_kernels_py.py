"""Pure-numpy stencil kernels; the fallback when the compiled core is absent.

Semantics shared with ``_kernels.pyx``:

* a face between voxels ``i`` and ``i + e`` exists iff both are inside the
  domain; a missing face carries zero gradient (mirrored ghost value), which
  is the homogeneous Neumann condition on the contour and at the array edge;
* advection is ``-V . grad C`` with first-order upwinding per axis;
* diffusion is flux form, face diffusivity is the mean of the two voxels or,
  with ``nested``, the value of the higher-index voxel;
* rows of non-active voxels (Dirichlet slabs, outside) are zero.
"""

from __future__ import annotations

import numpy as np


def _pair(ndim, axis, n):
    lo = [slice(None)] * ndim
    hi = [slice(None)] * ndim
    lo[axis] = slice(0, n - 1)
    hi[axis] = slice(1, n)
    return tuple(lo), tuple(hi)


def face_bits(inside):
    """Existing-face bitmask, bit ``2a`` lower and ``2a + 1`` upper neighbor on axis ``a``."""
    inside = np.asarray(inside, dtype=bool)
    out = np.zeros(inside.shape, dtype=np.uint8)
    for a in range(3):
        n = inside.shape[a]
        if n == 1:
            continue
        lo, hi = _pair(3, a, n)
        face = inside[lo] & inside[hi]
        out[hi] |= np.where(face, 1 << (2 * a), 0).astype(np.uint8)
        out[lo] |= np.where(face, 1 << (2 * a + 1), 0).astype(np.uint8)
    return out


def rhs(c, v, d, inside, active, spacing, nested=False, adv=True, dif=True, out=None, nb=None):
    inside = inside.view(bool) if inside.dtype == np.uint8 else inside
    active = active.view(bool) if active.dtype == np.uint8 else active
    if out is None:
        out = np.zeros_like(c)
    else:
        out[...] = 0.0
    for a in range(3):
        n = c.shape[a]
        if n == 1:
            continue
        h = spacing[a]
        lo, hi = _pair(3, a, n)
        face = inside[lo] & inside[hi]
        dc = np.where(face, c[hi] - c[lo], 0.0) / h
        if adv:
            va = v[a]
            gb = np.zeros_like(c)
            gf = np.zeros_like(c)
            gb[hi] = dc
            gf[lo] = dc
            out -= np.where(va > 0, va * gb, np.where(va < 0, va * gf, 0.0))
        if dif:
            df = d[hi] if nested else 0.5 * (d[lo] + d[hi])
            flux = df * dc / h
            out[lo] += flux
            out[hi] -= flux
    out[~active] = 0.0
    return out


def rhs_vjp(c, v, d, inside, active, spacing, nested, adv, dif, kbar, cbar, vbar=None, dbar=None, nb=None):
    """Accumulate ``J^T kbar`` into ``cbar`` and parameter cotangents into ``vbar``/``dbar``."""
    inside = inside.view(bool) if inside.dtype == np.uint8 else inside
    active = active.view(bool) if active.dtype == np.uint8 else active
    kb = np.where(active, kbar, 0.0)
    for a in range(3):
        n = c.shape[a]
        if n == 1:
            continue
        h = spacing[a]
        lo, hi = _pair(3, a, n)
        face = inside[lo] & inside[hi]
        dc = np.where(face, c[hi] - c[lo], 0.0) / h
        if adv:
            va = v[a]
            pos = va > 0
            neg = va < 0
            wb = np.where(pos, -va * kb, 0.0)
            wf = np.where(neg, -va * kb, 0.0)
            wface = np.where(face, wb[hi] + wf[lo], 0.0) / h
            cbar[hi] += wface
            cbar[lo] -= wface
            if vbar is not None:
                gb = np.zeros_like(c)
                gf = np.zeros_like(c)
                gb[hi] = dc
                gf[lo] = dc
                g = np.where(pos, gb, np.where(neg, gf, 0.5 * (gb + gf)))
                vbar[a] -= kb * g
        if dif:
            df = d[hi] if nested else 0.5 * (d[lo] + d[hi])
            wflux = (kb[lo] - kb[hi]) / h
            wdc = np.where(face, wflux * df, 0.0) / h
            cbar[hi] += wdc
            cbar[lo] -= wdc
            if dbar is not None:
                wdf = wflux * dc
                if nested:
                    dbar[hi] += wdf
                else:
                    dbar[lo] += 0.5 * wdf
                    dbar[hi] += 0.5 * wdf
