import numpy as np
import pytest

from stochwave.grid import hamiltonian_build, harmonic_potential, make_grid


@pytest.fixture(scope="session")
def grid64():
    return make_grid(64, 20.0)


@pytest.fixture(scope="session")
def grid256():
    return make_grid(256, 20.0)


@pytest.fixture(scope="session")
def h64(grid64):
    return hamiltonian_build(grid64, 1.0, 1.0, harmonic_potential(grid64))


@pytest.fixture(scope="session")
def h256(grid256):
    return hamiltonian_build(grid256, 1.0, 1.0, harmonic_potential(grid256))


def random_hermitian(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (a + a.conj().T)
