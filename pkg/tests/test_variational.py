import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecparisi.cascade import PsiGridConfig, SpinLaw, psi_grid
from vecparisi.cone import XiModel
from vecparisi.paths import LipschitzPath, RampStepPath, StepPath, to_step
from vecparisi.variational import (
    DiscretizedControl,
    VariationalError,
    critical_point_solve,
    gateaux_fd,
    hopflax_functional,
    hopflax_solve,
    j_functional,
    parisi_functional,
    parisi_solve,
    project_chain,
    uniqueness_probe,
)

ISING = SpinLaw.ising(1)
# one frozen grid so that exact identities are compared on the same discretization
CFG = PsiGridConfig(bound=6.0)
seeds = st.integers(0, 2**31 - 1)


def step(z, vals):
    return StepPath(np.array(z, dtype=float), np.array(vals, dtype=float).reshape(len(vals), 1, 1))


def random_control(rng, K, dim):
    g = rng.standard_normal((K, dim, dim))
    return DiscretizedControl.feasible(np.cumsum(g @ np.swapaxes(g, 1, 2), axis=0))


def shifted(q, t, model, p):
    """``q + t grad xi(p)`` as a step path on the merged cells."""
    edges = np.union1d(q.edges, p.edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return StepPath.from_edges(edges, q(mids) + t * model.gradient(p(mids)))


def test_project_chain_one_dimensional():
    out = project_chain(np.array([0.7, -0.2, 0.9]).reshape(3, 1, 1), 1.0)[:, 0, 0]
    assert out.sum() == pytest.approx(1.0) and np.all(out >= 0)
    # the simplex projection subtracts a common shift from the positive part
    assert out[0] - out[2] == pytest.approx(0.7 - 0.9)
    inside = np.array([0.1, 0.2]).reshape(2, 1, 1)
    assert np.array_equal(project_chain(inside, 1.0), inside)


@given(seed=seeds)
def test_project_chain_is_feasible_idempotent_and_nearest(seed):
    rng = np.random.default_rng(seed)
    delta = rng.standard_normal((3, 2, 2))
    delta = delta + np.swapaxes(delta, 1, 2)
    proj = project_chain(delta, 1.0)
    assert np.all(np.linalg.eigvalsh(proj)[:, 0] >= -1e-10)
    assert np.linalg.norm(proj.sum(axis=0)) <= 1.0 + 1e-10
    assert np.allclose(project_chain(proj, 1.0), proj, atol=1e-8)
    dist = np.linalg.norm(delta - proj)
    for _ in range(10):
        other = project_chain(rng.standard_normal((3, 2, 2)), 1.0)
        assert dist <= np.linalg.norm(delta - other) + 1e-7


def test_control_validation():
    with pytest.raises(VariationalError):
        DiscretizedControl(np.array([0.5, 0.2]))
    with pytest.raises(VariationalError):
        DiscretizedControl(np.array([0.5, 1.5]))
    c = DiscretizedControl.feasible(np.array([0.9, 0.3, 2.0]))
    assert c.K == 3 and np.all(np.diff(c.values[:, 0, 0]) >= 0) and c.values[-1, 0, 0] <= 1.0


def test_parisi_functional_trivial_cases():
    q = step([0.5], [0.2, 0.6])
    model = XiModel.sk(1.0)
    base = psi_grid(q, ISING, CFG)
    zero = DiscretizedControl(np.zeros(4))
    assert parisi_functional(1.0, q, zero, model, ISING, CFG) == pytest.approx(base, abs=1e-12)
    p = DiscretizedControl(np.array([0.1, 0.3, 0.5, 0.9]))
    assert parisi_functional(0.0, q, p, model, ISING, CFG) == pytest.approx(base, abs=1e-12)


def test_parisi_one_atom_closed_form():
    t, m = 0.7, 0.4
    q = StepPath.constant([[0.0]])
    value = parisi_functional(t, q, DiscretizedControl(np.array([m])), XiModel.sk(1.0), ISING, CFG)
    assert value == pytest.approx(psi_grid(StepPath.constant([[2 * t * m]]), ISING, CFG) - t * m**2, abs=1e-12)


def test_parisi_solve_small_beta_matches_one_atom_scan():
    t, model, q = 1.0, XiModel.sk(0.2), StepPath.constant([[0.0]])
    grid = np.linspace(0.0, 1.0, 1001)
    scan = max(psi_grid(StepPath.constant([[2 * t * 0.04 * m]]), ISING) - t * 0.04 * m**2 for m in grid)
    rep = parisi_solve(t, q, model, ISING, K=1, n_starts=3)
    assert rep.value == pytest.approx(scan, abs=1e-4)


def test_parisi_solve_small_time_limit():
    q = step([0.5], [0.2, 0.6])
    rep = parisi_solve(1e-4, q, XiModel.sk(1.0), ISING, K=2, n_starts=2)
    assert abs(rep.value - psi_grid(q, ISING)) <= 1e-3


def test_parisi_solve_needs_positive_time():
    with pytest.raises(VariationalError):
        parisi_solve(0.0, StepPath.constant([[0.0]]), XiModel.sk(1.0), ISING)


def test_refinement_is_monotone():
    q = RampStepPath.ramp(0.2)
    model = XiModel.sk(1.0)
    coarse = parisi_solve(0.5, q, model, ISING, K=2, n_starts=3)
    fine = parisi_solve(0.5, q, model, ISING, K=4, n_starts=3)
    assert coarse.value <= fine.value + 1e-6


def test_iterates_stay_feasible():
    rep = parisi_solve(1.0, RampStepPath.ramp(0.1), XiModel.sk(1.0), ISING, K=3, n_starts=3)
    for s in rep.starts:
        c = s["control"]
        assert np.all(np.diff(c[:, 0, 0]) >= -1e-12) and np.all(c >= -1e-12) and np.all(c <= 1 + 1e-12)


def test_hopflax_identity_path():
    q = step([0.4], [0.1, 0.5])
    assert hopflax_functional(0.8, q, q, XiModel.sk(1.0), ISING, CFG) == pytest.approx(
        psi_grid(q, ISING, CFG), abs=1e-12)


@pytest.mark.parametrize("model", [XiModel.sk(1.0), XiModel.pspin({2: 1.0, 3: 0.5})], ids=["sk", "mixed"])
@settings(max_examples=10)
@given(seed=seeds, t=st.floats(0.1, 1.5))
def test_theta_identity_pathwise(model, seed, t):
    rng = np.random.default_rng(seed)
    q = step([0.5], [0.1, 0.1 + rng.uniform(0, 0.5)])
    p = random_control(rng, 3, 1)
    par = parisi_functional(t, q, p, model, ISING)
    hl = hopflax_functional(t, q, shifted(q, t, model, p.to_path()), model, ISING)
    assert abs(par - hl) <= 1e-6


@settings(max_examples=10)
@given(seed=seeds)
def test_theta_identity_pathwise_2d(seed):
    rng = np.random.default_rng(seed)
    model = XiModel.frobenius(0.5, 2)
    q = StepPath.constant(0.1 * np.eye(2))
    p = random_control(rng, 2, 2)
    law = SpinLaw.ising(2)
    par = parisi_functional(0.5, q, p, model, law)
    hl = hopflax_functional(0.5, q, shifted(q, 0.5, model, p.to_path()), model, law)
    assert abs(par - hl) <= 1e-6


@settings(max_examples=10)
@given(seed=seeds)
def test_j_functional_bounds_hopflax(seed):
    # Fenchel: <p, q - q'> + t xi(p) >= -t xi*((q' - q) / t)
    rng = np.random.default_rng(seed)
    model, t = XiModel.sk(1.0), 0.6
    q = step([0.5], [0.1, 0.4])
    qp = step([0.3, 0.6], np.cumsum(rng.uniform(0, 0.5, 3)))
    p = random_control(rng, 4, 1).to_path()
    assert j_functional(t, q, qp, p, model, ISING) >= hopflax_functional(t, q, qp, model, ISING) - 1e-9


@settings(max_examples=10)
@given(seed=seeds)
def test_j_functional_on_the_critical_relation(seed):
    rng = np.random.default_rng(seed)
    model, t = XiModel.pspin({2: 1.0, 3: 0.5}), 0.8
    q = step([0.5], [0.1, 0.3])
    p = random_control(rng, 3, 1)
    qp = shifted(q, t, model, p.to_path())
    assert j_functional(t, q, qp, p.to_path(), model, ISING) == pytest.approx(
        parisi_functional(t, q, p, model, ISING), abs=1e-9)


def test_j_functional_trivial_and_riemann():
    q = step([0.5], [0.1, 0.3])
    model = XiModel.sk(1.0)
    zero = StepPath.constant([[0.0]])
    assert j_functional(0.5, q, q, zero, model, ISING, CFG) == pytest.approx(psi_grid(q, ISING, CFG), abs=1e-12)
    qp = step([0.3, 0.7], [0.2, 0.4, 0.5])
    p = step([0.25, 0.6], [0.1, 0.5, 0.8])
    n = 200_000
    u = (np.arange(n) + 0.5) / n
    inner = np.mean(p(u)[:, 0, 0] * (q(u) - qp(u))[:, 0, 0])
    xi = np.mean(p(u)[:, 0, 0] ** 2)
    oracle = psi_grid(qp, ISING, CFG) + inner + 0.5 * xi
    assert j_functional(0.5, q, qp, p, model, ISING, CFG) == pytest.approx(oracle, abs=1e-10)


def test_hopflax_agrees_with_parisi_and_maximizer_relation():
    t, q, model = 0.5, step([0.5], [0.05, 0.3]), XiModel.sk(1.0)
    par = parisi_solve(t, q, model, ISING, K=2, n_starts=3)
    hl = hopflax_solve(t, q, model, ISING, K=2, n_starts=3)
    assert abs(hl.value - par.value) <= 5e-3 * (1 + abs(par.value))
    target = shifted(q, t, model, par.optimizer)
    edges = np.union1d(target.edges, hl.optimizer.edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    l2 = np.sqrt(np.sum(np.diff(edges) * (target(mids) - hl.optimizer(mids))[:, 0, 0] ** 2))
    assert l2 <= 1e-2


def test_hopflax_small_time_limit():
    q = step([0.5], [0.2, 0.6])
    rep = hopflax_solve(1e-4, q, XiModel.sk(1.0), ISING, K=2, n_starts=2)
    assert abs(rep.value - psi_grid(q, ISING)) <= 1e-3


def test_critical_point_regression():
    t, q, model = 1.0, RampStepPath.ramp(0.1), XiModel.sk(0.2)
    cp = critical_point_solve(t, q, model, ISING, K=4, damping=0.5)
    assert cp.converged and cp.iterations < 200
    assert cp.residuals["q_relation"] <= 1e-6 and cp.residuals["p_relation"] <= 1e-6
    par = parisi_solve(t, q, model, ISING, K=4, n_starts=3)
    j = j_functional(t, q, cp.qprime, cp.p.to_path(), model, ISING)
    assert abs(j - par.value) <= 1e-3


def test_critical_point_small_time():
    q = step([0.5], [0.1, 0.4])
    cp = critical_point_solve(1e-4, q, XiModel.sk(1.0), ISING, K=2)
    assert np.allclose(cp.qprime(np.array([0.25, 0.75])), q(np.array([0.25, 0.75])), atol=1e-3)


def test_critical_point_rejects_bad_damping():
    with pytest.raises(VariationalError):
        critical_point_solve(1.0, StepPath.constant([[0.0]]), XiModel.sk(1.0), ISING, damping=0.0)


def test_uniqueness_skips_uncertified_path():
    rep = uniqueness_probe(1.0, StepPath.constant([[0.0]]), XiModel.sk(0.5), ISING, K=2, n_starts=2)
    assert rep["assertion"].startswith("skipped")


def test_gateaux_zero_direction():
    kappa = LipschitzPath.from_function(lambda u: np.zeros((1, 1)), 8)
    r = gateaux_fd(1.0, RampStepPath.ramp(0.2), kappa, XiModel.sk(0.5), ISING, K=2, n_starts=2)
    assert abs(r["estimate"]) <= 1e-8 and r["inner_product"] == 0.0


def test_to_step_is_used_consistently():
    # ramps enter the problems through exact cell averages
    ramp = RampStepPath.ramp(0.3)
    p = DiscretizedControl(np.array([0.2, 0.6]))
    a = parisi_functional(0.5, ramp, p, XiModel.sk(1.0), ISING)
    fine = to_step(ramp, np.linspace(0, 1, 3))
    b = parisi_functional(0.5, fine, p, XiModel.sk(1.0), ISING)
    assert a == pytest.approx(b, abs=1e-12)
