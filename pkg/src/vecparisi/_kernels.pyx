# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled spline / log-sum-exp kernels for the backward cascade recursion.

Grids are uniform; evaluation outside the grid clamps to the boundary cell
edge. Must stay numerically identical (to round-off) with ``_kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, floor

cnp.import_array()


cdef inline double _spline1(const double[::1] f, const double[::1] m,
                            double x0, double h, Py_ssize_t n, double x) nogil:
    cdef double s = (x - x0) / h
    cdef Py_ssize_t i
    if s <= 0.0:
        i = 0
        s = 0.0
    elif s >= n - 1:
        i = n - 2
        s = 1.0
    else:
        i = <Py_ssize_t>floor(s)
        if i > n - 2:
            i = n - 2
        s = s - i
    cdef double a = 1.0 - s
    cdef double h2 = h * h / 6.0
    return (a * f[i] + s * f[i + 1]
            + ((a * a * a - a) * m[i] + (s * s * s - s) * m[i + 1]) * h2)


cdef inline double _spline2(const double[:, ::1] f, const double[:, ::1] fxx,
                            const double[:, ::1] fyy, const double[:, ::1] fxxyy,
                            double x0, double hx, Py_ssize_t nx,
                            double y0, double hy, Py_ssize_t ny,
                            double x, double y) nogil:
    cdef double s = (x - x0) / hx
    cdef double r = (y - y0) / hy
    cdef Py_ssize_t i, j
    if s <= 0.0:
        i = 0
        s = 0.0
    elif s >= nx - 1:
        i = nx - 2
        s = 1.0
    else:
        i = <Py_ssize_t>floor(s)
        if i > nx - 2:
            i = nx - 2
        s = s - i
    if r <= 0.0:
        j = 0
        r = 0.0
    elif r >= ny - 1:
        j = ny - 2
        r = 1.0
    else:
        j = <Py_ssize_t>floor(r)
        if j > ny - 2:
            j = ny - 2
        r = r - j
    cdef double ax0 = 1.0 - s, ax1 = s
    cdef double cx0 = (ax0 * ax0 * ax0 - ax0) * hx * hx / 6.0
    cdef double cx1 = (ax1 * ax1 * ax1 - ax1) * hx * hx / 6.0
    cdef double ay0 = 1.0 - r, ay1 = r
    cdef double cy0 = (ay0 * ay0 * ay0 - ay0) * hy * hy / 6.0
    cdef double cy1 = (ay1 * ay1 * ay1 - ay1) * hy * hy / 6.0
    cdef double tot = 0.0
    # tensor product: x-spline coefficients against y-spline coefficients
    tot += ay0 * (ax0 * f[i, j] + ax1 * f[i + 1, j] + cx0 * fxx[i, j] + cx1 * fxx[i + 1, j])
    tot += ay1 * (ax0 * f[i, j + 1] + ax1 * f[i + 1, j + 1] + cx0 * fxx[i, j + 1] + cx1 * fxx[i + 1, j + 1])
    tot += cy0 * (ax0 * fyy[i, j] + ax1 * fyy[i + 1, j] + cx0 * fxxyy[i, j] + cx1 * fxxyy[i + 1, j])
    tot += cy1 * (ax0 * fyy[i, j + 1] + ax1 * fyy[i + 1, j + 1] + cx0 * fxxyy[i, j + 1] + cx1 * fxxyy[i + 1, j + 1])
    return tot


def eval_1d(double[::1] f, double[::1] m, double x0, double h, double[::1] pts):
    cdef Py_ssize_t n = f.shape[0], k, npts = pts.shape[0]
    out = np.empty(npts)
    cdef double[::1] o = out
    with nogil:
        for k in range(npts):
            o[k] = _spline1(f, m, x0, h, n, pts[k])
    return out


def level_1d(double[::1] f, double[::1] m, double x0, double h,
             double[::1] offsets, double[::1] logw, double zeta):
    """out[i] = log(sum_j w_j exp(zeta * S(x_i + g_j))) / zeta on the grid."""
    cdef Py_ssize_t n = f.shape[0], nq = offsets.shape[0], i, j
    out = np.empty(n)
    buf = np.empty(nq)
    cdef double[::1] o = out
    cdef double[::1] b = buf
    cdef double xi, mx, acc, v
    with nogil:
        for i in range(n):
            xi = x0 + i * h
            mx = -1e300
            for j in range(nq):
                v = zeta * _spline1(f, m, x0, h, n, xi + offsets[j]) + logw[j]
                b[j] = v
                if v > mx:
                    mx = v
            acc = 0.0
            for j in range(nq):
                acc += exp(b[j] - mx)
            o[i] = (mx + log(acc)) / zeta
    return out


def eval_2d(double[:, ::1] f, double[:, ::1] fxx, double[:, ::1] fyy,
            double[:, ::1] fxxyy, double x0, double hx, double y0, double hy,
            double[:, ::1] pts):
    cdef Py_ssize_t nx = f.shape[0], ny = f.shape[1], k, npts = pts.shape[0]
    out = np.empty(npts)
    cdef double[::1] o = out
    with nogil:
        for k in range(npts):
            o[k] = _spline2(f, fxx, fyy, fxxyy, x0, hx, nx, y0, hy, ny,
                            pts[k, 0], pts[k, 1])
    return out


def level_2d(double[:, ::1] f, double[:, ::1] fxx, double[:, ::1] fyy,
             double[:, ::1] fxxyy, double x0, double hx, double y0, double hy,
             double[:, ::1] offsets, double[::1] logw, double zeta):
    cdef Py_ssize_t nx = f.shape[0], ny = f.shape[1], nq = offsets.shape[0]
    cdef Py_ssize_t i, j, k
    out = np.empty((nx, ny))
    buf = np.empty(nq)
    cdef double[:, ::1] o = out
    cdef double[::1] b = buf
    cdef double xi, yj, mx, acc, v
    with nogil:
        for i in range(nx):
            xi = x0 + i * hx
            for j in range(ny):
                yj = y0 + j * hy
                mx = -1e300
                for k in range(nq):
                    v = zeta * _spline2(f, fxx, fyy, fxxyy, x0, hx, nx, y0, hy, ny,
                                        xi + offsets[k, 0], yj + offsets[k, 1]) + logw[k]
                    b[k] = v
                    if v > mx:
                        mx = v
                acc = 0.0
                for k in range(nq):
                    acc += exp(b[k] - mx)
                o[i, j] = (mx + log(acc)) / zeta
    return out


def tilt_1d(double[::1] f, double[::1] m, double[::1] fprev,
            double[:, ::1] hs, double[:, ::1] hm, double x0, double h,
            double[::1] offsets, double[::1] logw, double zeta):
    """out[c, i] = sum_j p_ij H_c(x_i + g_j), p_ij ∝ w_j exp(zeta * (S(x_i + g_j) - fprev_i))."""
    cdef Py_ssize_t n = f.shape[0], nq = offsets.shape[0], nc = hs.shape[0], i, j, c
    out = np.zeros((nc, n))
    cdef double[:, ::1] o = out
    cdef double xi, t, wgt, tot
    with nogil:
        for i in range(n):
            xi = x0 + i * h
            tot = 0.0
            for j in range(nq):
                t = xi + offsets[j]
                wgt = exp(zeta * (_spline1(f, m, x0, h, n, t) - fprev[i]) + logw[j])
                tot += wgt
                for c in range(nc):
                    o[c, i] += wgt * _spline1(hs[c], hm[c], x0, h, n, t)
            for c in range(nc):
                o[c, i] /= tot
    return out


def tilt_2d(double[:, ::1] f, double[:, ::1] fxx, double[:, ::1] fyy,
            double[:, ::1] fxxyy, double[:, ::1] fprev,
            double[:, :, ::1] hs, double[:, :, ::1] hxx, double[:, :, ::1] hyy,
            double[:, :, ::1] hxxyy, double x0, double hx, double y0, double hy,
            double[:, ::1] offsets, double[::1] logw, double zeta):
    cdef Py_ssize_t nx = f.shape[0], ny = f.shape[1], nq = offsets.shape[0]
    cdef Py_ssize_t nc = hs.shape[0], i, j, k, c
    out = np.zeros((nc, nx, ny))
    cdef double[:, :, ::1] o = out
    cdef double xi, yj, tx, ty, wgt, tot
    with nogil:
        for i in range(nx):
            xi = x0 + i * hx
            for j in range(ny):
                yj = y0 + j * hy
                tot = 0.0
                for k in range(nq):
                    tx = xi + offsets[k, 0]
                    ty = yj + offsets[k, 1]
                    wgt = exp(zeta * (_spline2(f, fxx, fyy, fxxyy, x0, hx, nx, y0, hy, ny, tx, ty)
                                      - fprev[i, j]) + logw[k])
                    tot += wgt
                    for c in range(nc):
                        o[c, i, j] += wgt * _spline2(hs[c], hxx[c], hyy[c], hxxyy[c],
                                                     x0, hx, nx, y0, hy, ny, tx, ty)
                for c in range(nc):
                    o[c, i, j] /= tot
    return out
