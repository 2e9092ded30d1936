"""Pure-numpy twins of the compiled kernels in ``_kernels.pyx``."""

import numpy as np
from scipy.special import logsumexp


def _locate(x, x0, h, n):
    s = (np.asarray(x, dtype=float) - x0) / h
    s = np.clip(s, 0.0, n - 1)
    i = np.minimum(np.floor(s).astype(np.intp), n - 2)
    return i, s - i


def eval_1d(f, m, x0, h, pts):
    n = f.shape[0]
    i, s = _locate(pts, x0, h, n)
    a = 1.0 - s
    return (a * f[i] + s * f[i + 1]
            + ((a**3 - a) * m[i] + (s**3 - s) * m[i + 1]) * (h * h / 6.0))


def level_1d(f, m, x0, h, offsets, logw, zeta):
    n = f.shape[0]
    x = x0 + h * np.arange(n)
    vals = eval_1d(f, m, x0, h, (x[:, None] + offsets[None, :]).ravel()).reshape(n, -1)
    return logsumexp(zeta * vals + logw[None, :], axis=1) / zeta


def eval_2d(f, fxx, fyy, fxxyy, x0, hx, y0, hy, pts):
    nx, ny = f.shape
    i, s = _locate(pts[:, 0], x0, hx, nx)
    j, r = _locate(pts[:, 1], y0, hy, ny)
    ax = (1.0 - s, s)
    cx = (((1.0 - s) ** 3 - (1.0 - s)) * hx * hx / 6.0, (s**3 - s) * hx * hx / 6.0)
    ay = (1.0 - r, r)
    cy = (((1.0 - r) ** 3 - (1.0 - r)) * hy * hy / 6.0, (r**3 - r) * hy * hy / 6.0)
    tot = 0.0
    for b in (0, 1):
        jj = j + b
        along_f = ax[0] * f[i, jj] + ax[1] * f[i + 1, jj] + cx[0] * fxx[i, jj] + cx[1] * fxx[i + 1, jj]
        along_m = ax[0] * fyy[i, jj] + ax[1] * fyy[i + 1, jj] + cx[0] * fxxyy[i, jj] + cx[1] * fxxyy[i + 1, jj]
        tot = tot + ay[b] * along_f + cy[b] * along_m
    return tot


def level_2d(f, fxx, fyy, fxxyy, x0, hx, y0, hy, offsets, logw, zeta):
    nx, ny = f.shape
    gx, gy = np.meshgrid(x0 + hx * np.arange(nx), y0 + hy * np.arange(ny), indexing="ij")
    base = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pts = (base[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    vals = eval_2d(f, fxx, fyy, fxxyy, x0, hx, y0, hy, pts).reshape(nx * ny, -1)
    return (logsumexp(zeta * vals + logw[None, :], axis=1) / zeta).reshape(nx, ny)


def tilt_1d(f, m, fprev, hs, hm, x0, h, offsets, logw, zeta):
    n = f.shape[0]
    x = x0 + h * np.arange(n)
    pts = (x[:, None] + offsets[None, :]).ravel()
    vals = eval_1d(f, m, x0, h, pts).reshape(n, -1)
    lw = zeta * (vals - fprev[:, None]) + logw[None, :]
    w = np.exp(lw)
    w /= w.sum(axis=1, keepdims=True)
    hv = np.stack([eval_1d(hs[c], hm[c], x0, h, pts).reshape(n, -1) for c in range(hs.shape[0])])
    return np.einsum("ij,cij->ci", w, hv)


def tilt_2d(f, fxx, fyy, fxxyy, fprev, hs, hxx, hyy, hxxyy, x0, hx, y0, hy, offsets, logw, zeta):
    nx, ny = f.shape
    gx, gy = np.meshgrid(x0 + hx * np.arange(nx), y0 + hy * np.arange(ny), indexing="ij")
    base = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pts = (base[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    vals = eval_2d(f, fxx, fyy, fxxyy, x0, hx, y0, hy, pts).reshape(nx * ny, -1)
    w = np.exp(zeta * (vals - fprev.ravel()[:, None]) + logw[None, :])
    w /= w.sum(axis=1, keepdims=True)
    hv = np.stack([eval_2d(hs[c], hxx[c], hyy[c], hxxyy[c], x0, hx, y0, hy, pts).reshape(nx * ny, -1)
                   for c in range(hs.shape[0])])
    return np.einsum("ij,cij->ci", w, hv).reshape(-1, nx, ny)
