import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_psd
from vecparisi.cone import XiModel
from vecparisi.paths import (
    DiscreteMeasure,
    LipschitzPath,
    PathError,
    RampStepPath,
    StepPath,
    compose_grad_xi,
    inner_product,
    law_map,
    lp_distance,
    path_eval,
    path_from_dict,
    perturb_and_check,
    quantile_path,
    to_step,
    uparrow_certificate,
)
from vecparisi.transport import w2

seeds = st.integers(0, 2**31 - 1)


def scalar_step(z, vals):
    return StepPath(np.array(z, dtype=float), np.array(vals, dtype=float))


def random_step(rng, dim=1, k=None):
    k = int(rng.integers(0, 4)) if k is None else k
    z = np.sort(rng.uniform(0.02, 0.98, k))
    while k and np.min(np.diff(np.concatenate([[0], z, [1]]))) < 1e-3:
        z = np.sort(rng.uniform(0.02, 0.98, k))
    inc = [random_psd(rng, dim) for _ in range(k + 1)]
    return StepPath(z, np.cumsum(inc, axis=0))


def aligned(path):
    """Snap breakpoints to multiples of 1e-3 so a 10^5-point midpoint sum is exact on the steps."""
    z = np.unique(np.round(path.breakpoints, 3))
    z = z[(z > 0) & (z < 1)]
    vals = path.values[: len(z) + 1]
    return StepPath(z, vals)


def riemann(p1, p2, order, n=100_000):
    u = (np.arange(n) + 0.5) / n
    d = np.sqrt(np.sum((p1(u) - p2(u)) ** 2, axis=(1, 2)))
    return float(np.mean(d**order) ** (1.0 / order))


def test_eval_examples():
    zero = StepPath.constant(np.zeros((2, 2)))
    assert np.array_equal(path_eval(zero, 0.7), np.zeros((2, 2)))
    q = scalar_step([0.5], [1.0, 2.0])
    assert path_eval(q, 0.5)[0, 0] == 2.0
    assert path_eval(q, 0.4999)[0, 0] == 1.0
    r = RampStepPath.ramp(1.0, 2)
    assert np.allclose(path_eval(r, 0.3), 0.3 * np.eye(2))
    with pytest.raises(PathError):
        path_eval(q, 1.0)


def test_construction_validation():
    with pytest.raises(PathError):
        scalar_step([0.5], [1.0, 0.5])
    with pytest.raises(PathError):
        scalar_step([0.6, 0.4], [0.0, 1.0, 2.0])
    with pytest.raises(PathError):
        scalar_step([0.5], [-1.0, 0.0])
    merged = scalar_step([0.3, 0.6], [0.0, 1.0, 1.0])
    assert merged.K == 1 and merged.breakpoints[0] == 0.3


def test_lp_distance_examples():
    a = StepPath.constant([[0.0]])
    b = StepPath.constant([[1.0]])
    assert lp_distance(a, a, 1) == 0.0
    assert lp_distance(a, b, 1) == 1.0 and lp_distance(a, b, 2) == 1.0


@pytest.mark.parametrize("order", [1, 2])
def test_lp_distance_matches_riemann_sum(order):
    rng = np.random.default_rng(7)
    for _ in range(5):
        p1, p2 = aligned(random_step(rng, 2)), aligned(random_step(rng, 2))
        assert lp_distance(p1, p2, order) == pytest.approx(riemann(p1, p2, order), abs=1e-6)
        r1, r2 = RampStepPath(0.3, p1), RampStepPath(0.1, p2)
        assert lp_distance(r1, r2, order) == pytest.approx(riemann(r1, r2, order), abs=1e-6)


@given(seed=seeds)
def test_lp_distance_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    p, q, r = (random_step(rng, 1) for _ in range(3))
    for order in (1, 2):
        assert lp_distance(p, q, order) == pytest.approx(lp_distance(q, p, order), abs=1e-14)
        assert lp_distance(p, r, order) <= lp_distance(p, q, order) + lp_distance(q, r, order) + 1e-12


def test_certificate_examples():
    cert = uparrow_certificate(RampStepPath.ramp(1.0, 2))
    assert cert["ok"] and cert["c_low"] == 1.0
    bad = uparrow_certificate(scalar_step([0.5], [0.0, 1.0]))
    assert not bad["ok"] and bad["witness"][0] < bad["witness"][1]
    step = StepPath(np.array([0.5]), np.array([np.zeros((2, 2)), np.eye(2)]))
    cert = uparrow_certificate(RampStepPath(0.5, step))
    assert cert["ok"] and cert["c_low"] >= 0.5 and cert["grid_verified"]


def _verify_certificate(path, c, n_pairs, rng):
    u, v = np.sort(rng.uniform(0, 1, (2, n_pairs)), axis=0)
    keep = v - u > 1e-9
    u, v = u[keep], v[keep]
    inc = path(v) - path(u)
    lam = np.linalg.eigvalsh(inc)
    assert np.all(lam[:, 0] >= c * (1 - 1e-9) * (v - u) - 1e-14)
    assert np.all(lam[:, -1] / lam[:, 0] <= (1 + 1e-9) / c)


def test_certificate_examples_checked_on_pairs(rng):
    step = StepPath(np.array([0.5]), np.array([np.zeros((2, 2)), np.eye(2)]))
    path = RampStepPath(0.5, step)
    _verify_certificate(path, uparrow_certificate(path)["c_low"], 100, rng)


@given(seed=seeds)
def test_certificate_soundness(seed):
    rng = np.random.default_rng(seed)
    sp = random_step(rng, 2)
    sp = StepPath(sp.breakpoints, sp.values - sp.values[0])
    path = RampStepPath(float(rng.uniform(0.05, 1.0)), sp)
    cert = uparrow_certificate(path)
    assert cert["ok"]
    _verify_certificate(path, cert["c_low"], 10_000, rng)


def test_perturb_examples():
    q = RampStepPath.ramp(1.0)
    kappa = LipschitzPath.from_function(lambda u: np.array([[np.sin(u)]]), 64)
    r = perturb_and_check(q, kappa, 0.0)
    assert r["member"] and r["c_new"] == pytest.approx(1.0)
    assert perturb_and_check(q, kappa, 0.25)["member"]
    down = LipschitzPath.from_function(lambda u: -u * np.eye(1), 64)
    r = perturb_and_check(q, down, 100.0)
    assert not r["member"] and r["witness"] is not None


@given(seed=seeds)
def test_perturb_member_below_half_c_over_l(seed):
    rng = np.random.default_rng(seed)
    c = float(rng.uniform(0.1, 1.0))
    sp = random_step(rng, 2)
    path = RampStepPath(c, StepPath(sp.breakpoints, sp.values - sp.values[0]))
    c_cert = uparrow_certificate(path)["c_low"]
    a, b = rng.standard_normal((2, 2, 2))
    kappa = LipschitzPath.from_function(lambda u: u * (a + a.T) + np.sin(3 * u) * (b + b.T), 32)
    eps = c_cert / (2 * kappa.lipschitz) * float(rng.uniform(0.0, 1.0))
    assert perturb_and_check(path, kappa, eps)["member"]


def test_lipschitz_path_requires_zero_start():
    with pytest.raises(PathError):
        LipschitzPath(np.ones((3, 1, 1)))


def test_cell_averages_exact():
    kappa = LipschitzPath.from_function(lambda u: np.array([[u * u]]), 8)
    edges = np.array([0.0, 0.3, 1.0])
    u = (np.arange(200_000) + 0.5) / 200_000
    brute = [kappa(u[(u >= lo) & (u < hi)])[:, 0, 0].mean() for lo, hi in zip(edges[:-1], edges[1:])]
    assert np.allclose(kappa.cell_averages(edges)[:, 0, 0], brute, atol=1e-9)


def test_compose_grad_xi_examples(rng):
    q = RampStepPath(0.2, random_step(rng, 2, 2))
    p = StepPath.constant(0.3 * np.eye(2))
    model = XiModel.frobenius(0.5, 2)
    same = compose_grad_xi(q, 0.0, p, model)
    u = rng.uniform(0, 1, 100)
    assert np.allclose(same(u), q(u), atol=1e-12)
    sq = XiModel.sk(1.0)
    out = compose_grad_xi(StepPath.constant([[0.0]]), 1.0, StepPath.constant([[0.5]]), sq)
    assert out(np.array([0.4]))[0, 0, 0] == 1.0


def test_compose_grad_xi_pointwise(rng):
    q = RampStepPath(0.2, random_step(rng, 2, 2))
    p = random_step(rng, 2, 3)
    p = StepPath(p.breakpoints, p.values / (1.5 * np.sqrt(np.sum(p.values[-1] ** 2))))
    model = XiModel.entrywise([[1.0, 0.4], [0.4, 0.7]])
    out = compose_grad_xi(q, 0.7, p, model)
    u = rng.uniform(0, 1, 100)
    assert np.allclose(out(u), q(u) + 0.7 * model.gradient(p(u)), atol=1e-12)


def test_law_map_examples():
    m = law_map(StepPath.constant([[0.4]]))
    assert m.atoms.shape == (1, 1, 1) and m.weights.tolist() == [1.0]
    m = law_map(scalar_step([0.3], [0.0, 1.0]))
    assert m.atoms[:, 0, 0].tolist() == [0.0, 1.0]
    assert m.weights == pytest.approx([0.3, 0.7], abs=1e-15)


def test_quantile_path_examples():
    q = quantile_path(DiscreteMeasure(np.array([0.25]), np.array([1.0])))
    assert q.K == 0 and q.values[0, 0, 0] == 0.25
    q = quantile_path(DiscreteMeasure(np.array([2.0, 0.0]), np.array([0.5, 0.5])))
    assert q.breakpoints.tolist() == [0.5] and q.values[:, 0, 0].tolist() == [0.0, 2.0]
    with pytest.raises(PathError):
        quantile_path(DiscreteMeasure(np.array([-1.0]), np.array([1.0])))


@given(seed=seeds)
def test_round_trips(seed):
    rng = np.random.default_rng(seed)
    q = random_step(rng, 1)
    back = quantile_path(law_map(q))
    assert np.allclose(back.breakpoints, q.breakpoints, atol=1e-14)
    assert np.allclose(back.values, q.values, atol=1e-14)
    n = int(rng.integers(1, 6))
    mu = DiscreteMeasure(rng.uniform(0, 2, n), rng.dirichlet(np.ones(n)))
    m2 = law_map(quantile_path(mu))
    for a in np.unique(mu.atoms):
        assert m2.weights[np.isclose(m2.atoms[:, 0, 0], a)].sum() == pytest.approx(
            mu.weights[mu.atoms == a].sum(), abs=1e-12)


@given(seed=seeds)
def test_w2_isometry(seed):
    rng = np.random.default_rng(seed)
    q1, q2 = random_step(rng, 1), random_step(rng, 1)
    m1, m2 = law_map(q1), law_map(q2)
    m1 = DiscreteMeasure(m1.atoms[:, 0, 0], m1.weights)
    m2 = DiscreteMeasure(m2.atoms[:, 0, 0], m2.weights)
    assert abs(w2(m1, m2) - lp_distance(q1, q2, 2)) <= 1e-10


def test_inner_product_and_to_step(rng):
    p1, p2 = random_step(rng, 2, 2), random_step(rng, 2, 3)
    u = (np.arange(100_000) + 0.5) / 100_000
    brute = np.mean(np.sum(p1(u) * p2(u), axis=(1, 2)))
    assert inner_product(p1, p2) == pytest.approx(brute, abs=1e-4)
    ramp = RampStepPath(0.4, p1)
    edges = np.union1d(np.linspace(0, 1, 5), p1.edges)
    st_ = to_step(ramp, edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    assert np.allclose(st_(mids), ramp(mids), atol=1e-12)


def test_serialization_round_trip(rng):
    r = RampStepPath(0.3, random_step(rng, 2, 2))
    back = path_from_dict(r.to_dict())
    u = rng.uniform(0, 1, 50)
    assert np.allclose(back(u), r(u), atol=1e-15)
