# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stencil kernels. Same contract as ``_kernels_py``.

Voxels are visited in flat C order.  A per-voxel bitmask records which of
the six faces exist (bit ``2a`` = lower neighbor on axis ``a``, bit
``2a + 1`` = upper neighbor), so the inner loop never touches the mask.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _face_bits(const cnp.uint8_t *inside, cnp.uint8_t *nb,
                     Py_ssize_t nx, Py_ssize_t ny, Py_ssize_t nz) noexcept nogil:
    cdef Py_ssize_t i, j, k, p
    cdef Py_ssize_t sx = ny * nz, sy = nz
    cdef cnp.uint8_t b
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                p = i * sx + j * sy + k
                b = 0
                if inside[p]:
                    if i > 0 and inside[p - sx]:
                        b |= 1
                    if i < nx - 1 and inside[p + sx]:
                        b |= 2
                    if j > 0 and inside[p - sy]:
                        b |= 4
                    if j < ny - 1 and inside[p + sy]:
                        b |= 8
                    if k > 0 and inside[p - 1]:
                        b |= 16
                    if k < nz - 1 and inside[p + 1]:
                        b |= 32
                nb[p] = b


def face_bits(const cnp.uint8_t[:, :, ::1] inside):
    """Per-voxel existing-face bitmask for a domain."""
    cdef Py_ssize_t nx = inside.shape[0], ny = inside.shape[1], nz = inside.shape[2]
    out = np.zeros((nx, ny, nz), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] o = out
    with nogil:
        _face_bits(&inside[0, 0, 0], &o[0, 0, 0], nx, ny, nz)
    return out


cdef inline double _axis_rhs(const double *c, const double *d, Py_ssize_t p, Py_ssize_t s,
                             int bits, int shift, double vv, double ih, double ih2,
                             bint nested, bint adv, bint dif) noexcept nogil:
    # a missing neighbor is replaced by the voxel itself (mirrored ghost)
    cdef Py_ssize_t qm = p - s * ((bits >> shift) & 1)
    cdef Py_ssize_t qp = p + s * ((bits >> (shift + 1)) & 1)
    cdef double cc = c[p]
    cdef double gm = cc - c[qm], gp = c[qp] - cc
    cdef double r = 0.0
    if adv:
        r -= (max(vv, 0.0) * gm + min(vv, 0.0) * gp) * ih
    if dif:
        if nested:
            r += (d[qp] * gp - d[p] * gm) * ih2
        else:
            r += 0.5 * ((d[p] + d[qp]) * gp - (d[qm] + d[p]) * gm) * ih2
    return r


def rhs(const double[:, :, ::1] c, const double[:, :, :, ::1] v, const double[:, :, ::1] d,
        const cnp.uint8_t[:, :, ::1] inside, const cnp.uint8_t[:, :, ::1] active,
        spacing, bint nested=False, bint adv=True, bint dif=True, out=None, nb=None):
    cdef Py_ssize_t nx = c.shape[0], ny = c.shape[1], nz = c.shape[2]
    cdef Py_ssize_t n = nx * ny * nz, sx = ny * nz, sy = nz, p
    if out is None:
        out = np.zeros((nx, ny, nz))
    if nb is None:
        nb = face_bits(inside)
    cdef double[:, :, ::1] o = out
    cdef const cnp.uint8_t[:, :, ::1] nbv = nb
    cdef double ihx = 1.0 / spacing[0], ihy = 1.0 / spacing[1], ihz = 1.0 / spacing[2]
    cdef const double *cp = &c[0, 0, 0]
    cdef const double *dp = &d[0, 0, 0]
    cdef const double *vx = &v[0, 0, 0, 0]
    cdef const double *vy = &v[1, 0, 0, 0]
    cdef const double *vz = &v[2, 0, 0, 0]
    cdef const cnp.uint8_t *act = &active[0, 0, 0]
    cdef const cnp.uint8_t *bits = &nbv[0, 0, 0]
    cdef double *op = &o[0, 0, 0]
    cdef int b
    with nogil:
        for p in range(n):
            if not act[p]:
                op[p] = 0.0
                continue
            b = bits[p]
            op[p] = (_axis_rhs(cp, dp, p, sx, b, 0, vx[p], ihx, ihx * ihx, nested, adv, dif)
                     + _axis_rhs(cp, dp, p, sy, b, 2, vy[p], ihy, ihy * ihy, nested, adv, dif)
                     + _axis_rhs(cp, dp, p, 1, b, 4, vz[p], ihz, ihz * ihz, nested, adv, dif))
    return out


cdef inline void _axis_vjp(const double *c, const double *d, const double *kbm, Py_ssize_t p, Py_ssize_t s,
                           int bits, int shift, const double *v, double ih, double ih2,
                           bint nested, bint adv, bint dif,
                           double *cb, double *vb, double *db) noexcept nogil:
    # Gather form of the transpose: every output voxel collects the terms of
    # its own row and of the rows of its two neighbors on this axis.
    cdef Py_ssize_t hm = (bits >> shift) & 1
    cdef Py_ssize_t hp = (bits >> (shift + 1)) & 1
    cdef Py_ssize_t qm = p - s * hm
    cdef Py_ssize_t qp = p + s * hp
    cdef double cc = c[p], k0 = kbm[p]
    cdef double gm = cc - c[qm], gp = c[qp] - cc
    cdef double km = kbm[qm] - k0, kp = kbm[qp] - k0
    cdef double vv = v[p], fm, fp
    if adv:
        cb[p] += (-(max(vv, 0.0) * hm - min(vv, 0.0) * hp) * k0
                  + hp * max(v[qp], 0.0) * kbm[qp] - hm * min(v[qm], 0.0) * kbm[qm]) * ih
        # upwind branch derivative; the kink at vv == 0 takes the mean
        vb[p] -= ((vv > 0) * gm + (vv < 0) * gp + (vv == 0) * 0.5 * (gm + gp)) * ih * k0
    if dif:
        if nested:
            fp = d[qp]
            fm = d[p]
        else:
            fp = 0.5 * (d[p] + d[qp])
            fm = 0.5 * (d[qm] + d[p])
        cb[p] += (fp * kp + fm * km) * ih2
        # face p-1/2 carries gm * (k[p-1] - k[p]), face p+1/2 carries -gp * (k[p+1] - k[p])
        if nested:
            db[p] += gm * km * ih2
        else:
            db[p] += 0.5 * (gm * km - gp * kp) * ih2


def rhs_vjp(const double[:, :, ::1] c, const double[:, :, :, ::1] v, const double[:, :, ::1] d,
            const cnp.uint8_t[:, :, ::1] inside, const cnp.uint8_t[:, :, ::1] active,
            spacing, bint nested, bint adv, bint dif,
            const double[:, :, ::1] kbar, double[:, :, ::1] cbar, vbar=None, dbar=None, nb=None):
    cdef Py_ssize_t nx = c.shape[0], ny = c.shape[1], nz = c.shape[2]
    cdef Py_ssize_t n = nx * ny * nz, sx = ny * nz, sy = nz, p
    # cotangents for unrequested parameters go to scratch buffers
    if vbar is None:
        vbar = np.zeros((3, nx, ny, nz))
    if dbar is None:
        dbar = np.zeros((nx, ny, nz))
    if nb is None:
        nb = face_bits(inside)
    kbm_arr = np.where(np.asarray(active, dtype=bool), np.asarray(kbar), 0.0)
    cdef double[:, :, ::1] kbv = kbm_arr
    cdef double[:, :, :, ::1] vbv = vbar
    cdef double[:, :, ::1] dbv = dbar
    cdef const cnp.uint8_t[:, :, ::1] nbv = nb
    cdef double ihx = 1.0 / spacing[0], ihy = 1.0 / spacing[1], ihz = 1.0 / spacing[2]
    cdef const double *cp = &c[0, 0, 0]
    cdef const double *dp = &d[0, 0, 0]
    cdef const double *vp = &v[0, 0, 0, 0]
    cdef const double *kp = &kbv[0, 0, 0]
    cdef const cnp.uint8_t *ins = &inside[0, 0, 0]
    cdef const cnp.uint8_t *bits = &nbv[0, 0, 0]
    cdef double *cb = &cbar[0, 0, 0]
    cdef double *vb = &vbv[0, 0, 0, 0]
    cdef double *db = &dbv[0, 0, 0]
    cdef int b
    with nogil:
        for p in range(n):
            if not ins[p]:
                continue
            b = bits[p]
            _axis_vjp(cp, dp, kp, p, sx, b, 0, vp, ihx, ihx * ihx, nested, adv, dif, cb, vb, db)
            _axis_vjp(cp, dp, kp, p, sy, b, 2, vp + n, ihy, ihy * ihy, nested, adv, dif, cb, vb + n, db)
            _axis_vjp(cp, dp, kp, p, 1, b, 4, vp + 2 * n, ihz, ihz * ihz, nested, adv, dif, cb, vb + 2 * n, db)
