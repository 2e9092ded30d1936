"""The compiled kernels and their numpy twins must agree to round-off."""

import numpy as np
import pytest

from vecparisi import _kernels_py, kernels

compiled = pytest.importorskip("vecparisi._kernels")


@pytest.fixture
def grid1d():
    rng = np.random.default_rng(3)
    n = 41
    return dict(f=rng.standard_normal(n), m=rng.standard_normal(n), x0=-2.0, h=0.1,
                offsets=rng.normal(0, 0.5, 9), logw=np.log(rng.dirichlet(np.ones(9))))


@pytest.fixture
def grid2d():
    rng = np.random.default_rng(4)
    nx, ny = 13, 11
    arrs = {k: rng.standard_normal((nx, ny)) for k in ("f", "fxx", "fyy", "fxxyy")}
    return dict(arrs, x0=-1.0, hx=0.2, y0=-0.8, hy=0.15, offsets=rng.normal(0, 0.4, (7, 2)),
                logw=np.log(rng.dirichlet(np.ones(7))))


def test_eval_1d(grid1d):
    g = grid1d
    pts = np.linspace(-3, 3, 101)  # includes points outside the grid (clamped)
    a = compiled.eval_1d(g["f"], g["m"], g["x0"], g["h"], pts)
    b = _kernels_py.eval_1d(g["f"], g["m"], g["x0"], g["h"], pts)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13)


def test_spline_interpolates_nodes(grid1d):
    g = grid1d
    x = g["x0"] + g["h"] * np.arange(len(g["f"]))
    assert np.allclose(compiled.eval_1d(g["f"], g["m"], g["x0"], g["h"], x), g["f"], atol=1e-13)


@pytest.mark.parametrize("zeta", [0.3, 1.0])
def test_level_1d(grid1d, zeta):
    g = grid1d
    args = (g["f"], g["m"], g["x0"], g["h"], g["offsets"], g["logw"], zeta)
    assert np.allclose(compiled.level_1d(*args), _kernels_py.level_1d(*args), rtol=1e-12, atol=1e-12)


def test_tilt_1d(grid1d):
    g = grid1d
    rng = np.random.default_rng(5)
    n = len(g["f"])
    hs, hm = rng.standard_normal((2, 3, n))
    fprev = _kernels_py.level_1d(g["f"], g["m"], g["x0"], g["h"], g["offsets"], g["logw"], 0.4)
    args = (g["f"], g["m"], fprev, hs, hm, g["x0"], g["h"], g["offsets"], g["logw"], 0.4)
    assert np.allclose(compiled.tilt_1d(*args), _kernels_py.tilt_1d(*args), rtol=1e-12, atol=1e-12)


def test_eval_2d(grid2d):
    g = grid2d
    pts = np.random.default_rng(6).uniform(-1.5, 1.5, (200, 2))
    args = (g["f"], g["fxx"], g["fyy"], g["fxxyy"], g["x0"], g["hx"], g["y0"], g["hy"], pts)
    assert np.allclose(compiled.eval_2d(*args), _kernels_py.eval_2d(*args), rtol=1e-12, atol=1e-12)


def test_level_and_tilt_2d(grid2d):
    g = grid2d
    base = (g["f"], g["fxx"], g["fyy"], g["fxxyy"], g["x0"], g["hx"], g["y0"], g["hy"])
    lv = (*base, g["offsets"], g["logw"], 0.6)
    a, b = compiled.level_2d(*lv), _kernels_py.level_2d(*lv)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    rng = np.random.default_rng(8)
    hs, hxx, hyy, hxxyy = rng.standard_normal((4, 2, *g["f"].shape))
    tv = (g["f"], g["fxx"], g["fyy"], g["fxxyy"], b, hs, hxx, hyy, hxxyy, g["x0"], g["hx"], g["y0"],
          g["hy"], g["offsets"], g["logw"], 0.6)
    assert np.allclose(compiled.tilt_2d(*tv), _kernels_py.tilt_2d(*tv), rtol=1e-12, atol=1e-12)


def test_backend_switch_gives_same_psi():
    from vecparisi.cascade import SpinLaw, psi_grid
    from vecparisi.paths import StepPath

    q = StepPath(np.array([0.4]), np.array([[[0.1]], [[0.8]]]))
    before = kernels.BACKEND
    try:
        kernels.use_backend("python")
        slow = psi_grid(q, SpinLaw.ising(1))
        kernels.use_backend("compiled")
        fast = psi_grid(q, SpinLaw.ising(1))
    finally:
        kernels.use_backend(before)
    assert fast == pytest.approx(slow, abs=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")
