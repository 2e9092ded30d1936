import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecparisi.cascade import (
    CascadeError,
    CascadeSpec,
    GridError,
    PsiGridConfig,
    SpinLaw,
    default_branching,
    grad_psi,
    grad_psi_fd,
    mc_free_energy,
    overlap_samples,
    psi_cells,
    psi_grid,
    psi_mc,
    sample_cascade_weights,
    sample_field,
)
from vecparisi.cone import XiModel
from vecparisi.paths import RampStepPath, StepPath

# replica-symmetric Ising oracle at q = 1/2, by adaptive quadrature of a Gaussian integral:
# psi = 1/2 - E log cosh(Z) and d psi / d q = E tanh(Z)^2
RS_PSI = 0.12543279250856193
RS_SLOPE = 0.39429449039784115


def step(z, vals):
    return StepPath(np.array(z, dtype=float), np.array(vals, dtype=float).reshape(len(vals), 1, 1))


def test_spin_law_validation():
    with pytest.raises(CascadeError):
        SpinLaw(np.array([[2.0]]), np.array([1.0]))
    with pytest.raises(CascadeError):
        SpinLaw(np.array([[1.0], [-1.0]]), np.array([0.7, 0.7]))
    law = SpinLaw.ising(2)
    assert np.allclose(np.linalg.norm(law.atoms, axis=1), 1.0)


def test_spec_validation():
    with pytest.raises(CascadeError):
        CascadeSpec((0.5, 0.3))
    with pytest.raises(CascadeError):
        CascadeSpec((0.5,), M=1)
    assert CascadeSpec((0.2, 0.6), M=(3, 4)).n_leaves == 12


def test_default_branching_shrinks_low_levels():
    ms = default_branching([0.1, 0.3, 0.5])
    assert ms[0] <= ms[1] <= ms[2]
    assert np.prod(ms) <= 2000


def test_single_level_weights_second_moment():
    # E sum v^2 = 1 - zeta for a Poisson-Dirichlet(zeta) draw
    spec = CascadeSpec((0.5,), M=200, seed=1)
    rng = np.random.default_rng(0)
    s = np.array([np.sum(sample_cascade_weights(spec, rng) ** 2) for _ in range(4000)])
    assert abs(s.mean() - 0.5) <= 4 * s.std() / np.sqrt(s.size) + 5e-3


def test_weights_are_a_probability_vector():
    w = sample_cascade_weights(CascadeSpec((0.3, 0.7), M=(5, 20)))
    assert w.shape == (100,) and w.sum() == pytest.approx(1.0, abs=1e-12) and np.all(w > 0)


def test_field_covariance_matches_path():
    q = step([0.5], [0.3, 1.0])
    spec = CascadeSpec((0.5,), M=2)
    rng = np.random.default_rng(2)
    w = np.array([sample_field(spec, q, rng=rng)[:, 0] for _ in range(20000)])
    cov = np.cov(w.T)
    # siblings share the first increment only
    assert cov[0, 0] == pytest.approx(1.0, abs=0.05)
    assert cov[0, 1] == pytest.approx(0.3, abs=0.05)


def test_field_rejects_mismatched_levels():
    with pytest.raises(CascadeError):
        sample_field(CascadeSpec((0.4,), M=2), step([0.5], [0.3, 1.0]))


def test_psi_of_zero_is_zero():
    zero = StepPath.constant(np.zeros((2, 2)))
    assert psi_grid(zero, SpinLaw.ising(2)) == 0.0
    assert psi_mc(zero, SpinLaw.ising(2), CascadeSpec(()), 10).mean == 0.0


def test_replica_symmetric_closed_form():
    q = StepPath.constant([[0.5]])
    assert psi_grid(q, SpinLaw.ising(1)) == pytest.approx(RS_PSI, abs=1e-8)
    est = psi_mc(q, SpinLaw.ising(1), CascadeSpec(()), 100_000)
    assert abs(est.mean - RS_PSI) <= 4 * est.stderr


def test_replica_symmetric_gradient():
    g = grad_psi(StepPath.constant([[0.5]]), SpinLaw.ising(1))
    assert g[0, 0, 0] == pytest.approx(RS_SLOPE, abs=1e-6)


def test_ramps_need_discretizing():
    with pytest.raises(CascadeError):
        psi_grid(RampStepPath.ramp(1.0), SpinLaw.ising(1))


def test_non_psd_increment_rejected():
    vals = np.array([np.diag([0.5, 0.5]), np.diag([1.0, 0.2])])
    with pytest.raises(CascadeError):
        psi_cells(np.array([0.0, 0.5, 1.0]), vals, SpinLaw.ising(2))


def test_grid_too_small_raises_unless_widening():
    q = StepPath.constant([[2.0]])
    with pytest.raises(GridError):
        psi_grid(q, SpinLaw.ising(1), PsiGridConfig(bound=0.1, widen=False))
    assert psi_grid(q, SpinLaw.ising(1), PsiGridConfig(bound=0.1)) == pytest.approx(
        psi_grid(q, SpinLaw.ising(1)), abs=1e-9)


def test_multi_level_grid_agrees_with_monte_carlo():
    q = step([0.3, 0.45], [0.1, 0.4, 0.9])
    spec = CascadeSpec.for_path(q, seed=3)
    est = psi_mc(q, SpinLaw.ising(1), spec, 50_000)
    assert abs(est.mean - psi_grid(q, SpinLaw.ising(1))) <= 4 * est.stderr + 2e-3


def test_monte_carlo_is_seeded():
    q = step([0.4], [0.2, 0.6])
    a = psi_mc(q, SpinLaw.ising(1), CascadeSpec((0.4,), M=20, seed=9), 2000)
    b = psi_mc(q, SpinLaw.ising(1), CascadeSpec((0.4,), M=20, seed=9), 2000)
    c = psi_mc(q, SpinLaw.ising(1), CascadeSpec((0.4,), M=20, seed=10), 2000)
    assert a == b and a.mean != c.mean


def test_analytic_gradient_matches_finite_differences_1d():
    q = step([0.25, 0.5], [0.1, 0.5, 0.8])
    law = SpinLaw(np.array([[1.0], [-0.5], [0.2]]), np.array([0.5, 0.3, 0.2]))
    assert np.allclose(grad_psi(q, law), grad_psi_fd(q, law), atol=1e-5)


def test_analytic_gradient_matches_finite_differences_2d():
    vals = np.array([np.diag([0.1, 0.2]), [[0.5, 0.1], [0.1, 0.4]]])
    q = StepPath(np.array([0.4]), vals)
    # the default 2d grid is coarse; the discrepancy is documented at ~1e-3
    assert np.allclose(grad_psi(q, SpinLaw.ising(2)), grad_psi_fd(q, SpinLaw.ising(2)), atol=3e-3)


def test_fd_step_range():
    with pytest.raises(CascadeError):
        grad_psi_fd(StepPath.constant([[0.5]]), SpinLaw.ising(1), eps=0.1)


@settings(max_examples=15)
@given(a=st.floats(0.05, 1.0), b=st.floats(0.05, 1.0))
def test_gradient_density_is_between_zero_and_second_moment(a, b):
    q = step([0.5], [a, a + b])
    g = grad_psi(q, SpinLaw.ising(1))[:, 0, 0]
    assert np.all(g >= -1e-9) and np.all(g <= 1.0 + 1e-9)


@settings(max_examples=15)
@given(a=st.floats(0.0, 1.0), b=st.floats(0.0, 1.0))
def test_psi_is_monotone_in_the_path(a, b):
    lo, hi = sorted([a, b])
    law = SpinLaw.ising(1)
    assert psi_grid(StepPath.constant([[lo]]), law) <= psi_grid(StepPath.constant([[hi]]), law) + 1e-10


def test_free_energy_at_time_zero_is_psi():
    q = step([0.4], [0.2, 0.6])
    spec = CascadeSpec((0.4,), M=50, seed=4)
    exact = psi_grid(q, SpinLaw.ising(1))
    for n in (1, 2):
        est = mc_free_energy(n, 0.0, q, XiModel.sk(1.0), SpinLaw.ising(1), spec, 20_000)
        assert abs(est.mean - exact) <= 4 * est.stderr + 2e-3


def test_free_energy_single_site_closed_form():
    # N = 1, q = 0, xi(x) = x^2: H(+1) = H(-1), so F = -E[sqrt(2t) g - t] = t
    q = StepPath.constant([[0.0]])
    est = mc_free_energy(1, 0.5, q, XiModel.sk(1.0), SpinLaw.ising(1), CascadeSpec(()), 100_000)
    assert abs(est.mean - 0.5) <= 4 * est.stderr


def test_overlaps_at_time_zero():
    q = StepPath.constant([[0.0]])
    r = overlap_samples(2, 0.0, q, XiModel.sk(1.0), SpinLaw.ising(1), CascadeSpec(()), 2000)
    assert r.shape == (2000, 1, 1)
    assert np.all(np.abs(r) <= 1.0 + 1e-12)
    assert abs(r.mean()) <= 4 * r.std() / np.sqrt(r.size)
