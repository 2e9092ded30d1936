"""Kernel backend selection.

The compiled extension is used when it imports; set ``VECPARISI_PURE=1``
to force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("VECPARISI_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "compiled"


def use_backend(name):
    """Switch kernels at runtime (``"compiled"`` or ``"python"``); returns the previous name."""
    global _impl, BACKEND
    previous = BACKEND
    if name == "python":
        _impl = _kernels_py
    elif name == "compiled":
        from . import _kernels as _compiled
        _impl = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    return previous


def eval_1d(f, m, x0, h, pts):
    return _impl.eval_1d(f, m, float(x0), float(h), pts)


def level_1d(f, m, x0, h, offsets, logw, zeta):
    return _impl.level_1d(f, m, float(x0), float(h), offsets, logw, float(zeta))


def eval_2d(f, fxx, fyy, fxxyy, x0, hx, y0, hy, pts):
    return _impl.eval_2d(f, fxx, fyy, fxxyy, float(x0), float(hx), float(y0), float(hy), pts)


def level_2d(f, fxx, fyy, fxxyy, x0, hx, y0, hy, offsets, logw, zeta):
    return _impl.level_2d(f, fxx, fyy, fxxyy, float(x0), float(hx), float(y0), float(hy),
                          offsets, logw, float(zeta))


def tilt_1d(f, m, fprev, hs, hm, x0, h, offsets, logw, zeta):
    return _impl.tilt_1d(f, m, fprev, hs, hm, float(x0), float(h), offsets, logw, float(zeta))


def tilt_2d(f, fxx, fyy, fxxyy, fprev, hs, hxx, hyy, hxxyy, x0, hx, y0, hy, offsets, logw, zeta):
    return _impl.tilt_2d(f, fxx, fyy, fxxyy, fprev, hs, hxx, hyy, hxxyy, float(x0), float(hx),
                         float(y0), float(hy), offsets, logw, float(zeta))
