import numpy as np
import pytest
from scipy.linalg import expm

from stochwave.density import (DensityMatrix, Propagator, consistency_check_pure,
                               integrate_density, lindblad_rhs, liouville_rhs, maximally_mixed,
                               pure_state_density, purity, schrodinger_propagate, snapshot_steps)
from stochwave.errors import NotNormalizedError, NumericalInstabilityError
from stochwave.grid import OperatorMatrix, StateVector, coherent_state, eigenstates, make_grid
from stochwave.stochastic import dephasing_noise, lowering_operator, make_noise_model


def test_pure_state_diagnostics(grid64):
    rho = pure_state_density(coherent_state(grid64, 1.0))
    assert rho.trace() == pytest.approx(1.0, abs=1e-14)
    assert purity(rho) == pytest.approx(1.0, abs=1e-13)
    assert rho.hermiticity_error() == 0.0
    assert rho.min_eigenvalue() > -1e-14
    with pytest.raises(NotNormalizedError):
        pure_state_density(StateVector(np.ones(64), grid64))


def test_maximally_mixed(grid64):
    rho = maximally_mixed(grid64)
    assert rho.trace() == pytest.approx(1.0)
    assert rho.purity() == pytest.approx(1 / 64)
    np.testing.assert_allclose(rho.eigenvalues(), 1 / 64, atol=1e-15)


def test_snapshot_steps():
    np.testing.assert_array_equal(snapshot_steps(10, 3), [0, 3, 6, 9, 10])
    np.testing.assert_array_equal(snapshot_steps(0, 5), [0])


def test_rhs_are_traceless_and_hermitian(grid64, h64):
    rho = pure_state_density(coherent_state(grid64, 2.0))
    noise = make_noise_model(0.5 * lowering_operator(grid64).entries)
    for out in (liouville_rhs(rho, h64), lindblad_rhs(rho, h64, noise)):
        assert abs(out.trace()) <= 1e-12
        assert out.hermiticity_error() <= 1e-12


def test_lindblad_with_scalar_noise_reduces_to_liouville(grid64, h64):
    rho0 = pure_state_density(coherent_state(grid64, 1.0))
    lind = integrate_density(rho0, h64, 0.01, 300, "lindblad", "rk4", dephasing_noise(64, 0.7))
    liou = integrate_density(rho0, h64, 0.01, 300, "liouville", "rk4")
    assert np.max(np.abs(lind.entries - liou.entries)) <= 1e-12


def test_two_level_dephasing_oracle():
    """G = gamma diag(1, i), H = 0: coherence decays as exp(-(1 + i) gamma^2 t)."""
    g = make_grid(2, 2.0)  # dx = 1, so kernel and operator coincide
    gamma = 0.6
    noise = make_noise_model(gamma * np.diag([1.0, 1j]))
    h = OperatorMatrix(np.zeros((2, 2)), hermitian=True)
    psi = StateVector(np.array([1.0, 1.0]), g).normalized()
    series = integrate_density(pure_state_density(psi), h, 0.01, 200, "lindblad", "rk4", noise,
                               stride=50)
    want = 0.5 * np.exp(-(1 + 1j) * gamma**2 * series.times)
    np.testing.assert_allclose(series.entries[:, 0, 1], want, atol=1e-10)
    np.testing.assert_allclose(series.entries[:, 1, 0], want.conj(), atol=1e-10)
    np.testing.assert_allclose(series.entries[:, 0, 0], 0.5, atol=1e-14)


def test_propagator_matches_matrix_exponential(h64):
    prop = Propagator(h64, mu=0.8)
    np.testing.assert_allclose(prop.matrix(0.37), expm(-1j * 0.37 / 0.8 * h64.entries), atol=1e-11)


def test_eigenstate_is_stationary(grid64, h64):
    _, states = eigenstates(h64, grid64, 3)
    series = schrodinger_propagate(states[2], h64, 0.1, 50, stride=10)
    energy = 2.5
    for t, amp in zip(series.times, series.amplitudes):
        np.testing.assert_allclose(amp, np.exp(-1j * energy * t) * states[2].amplitudes, atol=1e-9)


def test_crank_nicolson_is_second_order(grid64, h64):
    psi = coherent_state(grid64, 1.0)
    exact = schrodinger_propagate(psi, h64, 0.02, 50)[-1].amplitudes
    errs = []
    for tau, n in ((0.02, 50), (0.01, 100)):
        cn = schrodinger_propagate(psi, h64, tau, n, method="crank_nicolson")[-1].amplitudes
        errs.append(np.sqrt(grid64.spacing) * np.linalg.norm(cn - exact))
    assert 3.6 < errs[0] / errs[1] < 4.4


def test_pure_state_equivalence(grid64, h64):
    psi = coherent_state(grid64, 2.0)
    rho = integrate_density(pure_state_density(psi), h64, 0.01, 1000, "liouville",
                            "exact_unitary_conjugation", stride=20)
    states = schrodinger_propagate(psi, h64, 0.01, 1000, stride=20)
    report = consistency_check_pure(rho, states)
    assert report.passed and report.max_deviation <= 1e-10


def test_lindblad_keeps_positivity_and_approaches_ground_state(grid64, h64):
    noise = make_noise_model(lowering_operator(grid64).entries)
    rho0 = pure_state_density(coherent_state(grid64, 1.5))
    series = integrate_density(rho0, h64, 1e-3, 8000, "lindblad", "rk4", noise, stride=2000)
    for i in range(len(series)):
        assert series[i].min_eigenvalue() >= -1e-10
        assert series[i].trace() == pytest.approx(1.0, abs=1e-10)
    # energy decays towards 0.5 as the displacement damps out like exp(-t/2)
    energy = [np.real(np.sum(h64.entries * series.entries[i].T)) * grid64.spacing
              for i in range(len(series))]
    want = 0.5 + 0.5 * 1.5**2 * np.exp(-series.times)
    np.testing.assert_allclose(energy, want, atol=1e-6)


def test_method_and_rhs_mismatch_is_rejected(grid64, h64):
    rho0 = pure_state_density(coherent_state(grid64, 0.0))
    with pytest.raises(ValueError):
        integrate_density(rho0, h64, 0.1, 1, "lindblad", "exact_unitary_conjugation",
                          dephasing_noise(64, 0.1))
    with pytest.raises(ValueError):
        integrate_density(rho0, h64, 0.1, 1, "lindblad", "rk4")


def test_unstable_rk4_reports_numerical_error(grid64, h64):
    rho0 = pure_state_density(coherent_state(grid64, 0.0))
    with pytest.raises(NumericalInstabilityError) as info:
        integrate_density(rho0, h64, 0.2, 2000, "liouville", "rk4")
    assert info.value.as_dict()["module"] == "density_dynamics"
    assert info.value.step is not None
