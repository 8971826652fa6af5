import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_hermitian
from stochwave.errors import DimensionMismatchError
from stochwave.functionals import (BilinearFunctional, CanonicalPair, conj_field_rate,
                                   default_scales, derivative_wrt_conj, derivative_wrt_field,
                                   evaluate, expectation_from_covariance, field_rate,
                                   norm_functional, phi_from_qp, poisson_bracket, qp_from_phi)
from stochwave.density import pure_state_density
from stochwave.grid import (OperatorMatrix, StateVector, coherent_state, gaussian_state,
                            make_grid, momentum_operator, position_operator)


def _functional(m, label="A"):
    return BilinearFunctional(OperatorMatrix.from_array(m), label)


def test_norm_functional_is_one_on_normalized_states(grid64):
    assert evaluate(norm_functional(grid64), coherent_state(grid64, 1.0)) == pytest.approx(1.0)


def test_norm_bracket_with_hamiltonian_vanishes_exactly(grid64, h64):
    bracket = poisson_bracket(norm_functional(grid64), BilinearFunctional(h64, "H"))
    assert np.all(bracket.kernel.entries == 0)
    assert bracket.label == "{N,H}"


def test_xp_bracket_evaluates_to_i_mu(grid256):
    xp = poisson_bracket(BilinearFunctional(position_operator(grid256), "x"),
                         BilinearFunctional(momentum_operator(grid256), "p"))
    assert evaluate(xp, gaussian_state(grid256, 0.3, 0.9, 0.5)) == pytest.approx(1j, abs=1e-6)


def test_bracket_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        poisson_bracket(norm_functional(make_grid(4, 1.0)), norm_functional(make_grid(5, 1.0)))


seeds = st.integers(0, 2**32 - 1)
sizes = st.integers(2, 10)


@settings(max_examples=40, deadline=None)
@given(seeds, sizes)
def test_bracket_antisymmetry(seed, n):
    rng = np.random.default_rng(seed)
    a, b = (_functional(random_hermitian(rng, n), lab) for lab in "AB")
    ab = poisson_bracket(a, b).kernel.entries
    ba = poisson_bracket(b, a).kernel.entries
    assert np.max(np.abs(ab + ba)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seeds, sizes)
def test_bracket_jacobi(seed, n):
    rng = np.random.default_rng(seed)
    a, b, c = (_functional(random_hermitian(rng, n, 1 / n), lab) for lab in "ABC")
    pb = poisson_bracket
    total = (pb(pb(a, b), c).kernel.entries + pb(pb(b, c), a).kernel.entries
             + pb(pb(c, a), b).kernel.entries)
    assert np.max(np.abs(total)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seeds, sizes)
def test_equation_of_motion_matches_bracket(seed, n):
    """dF/dt along the Hamiltonian flow equals <{F, H}> / (i mu)."""
    rng = np.random.default_rng(seed)
    g = make_grid(n, 1.0 * n)
    mu = 0.7
    f = _functional(random_hermitian(rng, n), "F")
    h = _functional(random_hermitian(rng, n), "H")
    psi = StateVector(rng.standard_normal(n) + 1j * rng.standard_normal(n), g)
    rate = field_rate(h, psi, mu)
    np.testing.assert_allclose(conj_field_rate(h, psi, mu), rate.conj(), atol=1e-12)
    # chain rule: dF/dt = dx * sum(dF/dphi* dphi*/dt + dF/dphi dphi/dt)
    df = g.spacing * np.sum(derivative_wrt_conj(f, psi) * rate.conj()
                            + derivative_wrt_field(f, psi) * rate)
    want = evaluate(poisson_bracket(f, h), psi) / (1j * mu)
    assert df == pytest.approx(want, abs=1e-10 * max(1.0, abs(want)))


def test_functional_derivatives_by_finite_differences():
    rng = np.random.default_rng(1)
    g = make_grid(5, 2.5)
    a = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))  # not hermitian
    f = BilinearFunctional(OperatorMatrix(a), "A")
    phi = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    eps = 1e-6
    d_conj, d_field = np.empty(5, complex), np.empty(5, complex)
    for i in range(5):
        e = np.zeros(5)
        e[i] = eps
        d_re = (f(StateVector(phi + e, g)) - f(StateVector(phi - e, g))) / (2 * eps)
        d_im = (f(StateVector(phi + 1j * e, g)) - f(StateVector(phi - 1j * e, g))) / (2 * eps)
        # Wirtinger derivatives, divided by the quadrature weight
        d_conj[i] = 0.5 * (d_re + 1j * d_im) / g.spacing
        d_field[i] = 0.5 * (d_re - 1j * d_im) / g.spacing
    state = StateVector(phi, g)
    np.testing.assert_allclose(derivative_wrt_conj(f, state), d_conj, atol=1e-7)
    np.testing.assert_allclose(derivative_wrt_field(f, state), d_field, atol=1e-7)


def test_expectation_from_pure_covariance_matches_direct_evaluation(grid64, h64):
    psi = gaussian_state(grid64, 1.0, 1.1, -0.4)
    f = BilinearFunctional(h64, "H")
    assert expectation_from_covariance(f, pure_state_density(psi)) == pytest.approx(
        evaluate(f, psi), abs=1e-12)


def test_canonical_pair_round_trip(grid64):
    alpha, beta = default_scales(1.0)
    assert alpha * beta == pytest.approx(0.5)
    psi = coherent_state(grid64, 1.0)
    pair = qp_from_phi(psi, alpha, beta)
    assert pair.mu == pytest.approx(1.0)
    np.testing.assert_allclose(phi_from_qp(pair, grid64).amplitudes, psi.amplitudes, atol=1e-15)
    # unequal scales are allowed as long as the product is fixed
    pair2 = qp_from_phi(psi, 2.0, 0.25)
    np.testing.assert_allclose(phi_from_qp(pair2, grid64).amplitudes, psi.amplitudes, atol=1e-15)


def test_canonical_pair_constraint_violation():
    pair = CanonicalPair(np.zeros(3), np.zeros(3), 1.0, 1.0, mu=1.0)
    with pytest.raises(ValueError, match="1/\\(2 mu\\)"):
        pair.check_constraint()
    with pytest.raises(ValueError):
        qp_from_phi(StateVector(np.zeros(3), make_grid(3, 1.0)), 0.0, 1.0)
