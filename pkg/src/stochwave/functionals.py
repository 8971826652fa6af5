"""Bilinear functionals of (phi, phi*), their Poisson brackets, and the
canonical (q, p) <-> phi change of variables.

For functionals ``A = int phi* A phi`` the bracket
``{A, B} = int (dA/dphi dB/dphi* - dB/dphi dA/dphi*) dx`` closes on the class:
its kernel is the matrix commutator ``[A, B]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError
from .grid import Grid, OperatorMatrix, StateVector, commutator, identity_operator, inner_product


@dataclass(eq=False)
class BilinearFunctional:
    kernel: OperatorMatrix
    label: str = ""

    def __call__(self, state: StateVector) -> complex:
        return evaluate(self, state)


def norm_functional(grid: Grid) -> BilinearFunctional:
    return BilinearFunctional(identity_operator(grid), "N")


def evaluate(f: BilinearFunctional, state: StateVector) -> complex:
    """``int phi*(x) (A phi)(x) dx``."""
    return inner_product(state, f.kernel.apply(state))


def poisson_bracket(a: BilinearFunctional, b: BilinearFunctional) -> BilinearFunctional:
    if a.kernel.dim != b.kernel.dim:
        raise DimensionMismatchError(
            f"functionals have kernels of dimension {a.kernel.dim} and {b.kernel.dim}"
        )
    return BilinearFunctional(commutator(a.kernel, b.kernel), f"{{{a.label},{b.label}}}")


def derivative_wrt_conj(f: BilinearFunctional, state: StateVector) -> np.ndarray:
    """Functional derivative with respect to phi*(x): ``(A phi)(x)``."""
    return f.kernel.entries @ state.amplitudes


def derivative_wrt_field(f: BilinearFunctional, state: StateVector) -> np.ndarray:
    """Functional derivative with respect to phi(x): ``int phi*(y) A(y, x) dy``."""
    return f.kernel.entries.T @ state.amplitudes.conj()


def field_rate(h: BilinearFunctional, state: StateVector, mu: float = 1.0) -> np.ndarray:
    """``d phi / dt`` from ``i mu d phi/dt = {phi, H}``.

    The bracket of the point field ``phi(x)`` with H picks out ``dH/dphi*(x)``
    because ``d phi(x) / d phi*(y) = 0``.
    """
    return derivative_wrt_conj(h, state) / (1j * mu)


def conj_field_rate(h: BilinearFunctional, state: StateVector, mu: float = 1.0) -> np.ndarray:
    """``d phi* / dt`` from ``i mu d phi*/dt = {phi*, H} = -dH/dphi``."""
    return -derivative_wrt_field(h, state) / (1j * mu)


def expectation_from_covariance(a: BilinearFunctional, rho) -> complex:
    """``int A(x, x') rho(x', x) dx dx'`` for a covariance kernel ``rho``."""
    r = rho.entries
    if r.shape[0] != a.kernel.dim:
        raise DimensionMismatchError(
            f"kernel of dimension {a.kernel.dim} against covariance of shape {r.shape}"
        )
    # trace(A @ rho) without forming the product
    return complex(rho.grid.spacing * np.sum(a.kernel.entries * r.T))


# -- canonical variables ----------------------------------------------------------

@dataclass(eq=False)
class CanonicalPair:
    q: np.ndarray
    p: np.ndarray
    alpha: float
    beta: float
    mu: float = 1.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.q.shape != self.p.shape:
            raise DimensionMismatchError(f"q has shape {self.q.shape}, p has {self.p.shape}")

    def check_constraint(self, tol: float = 1e-12) -> None:
        target = 1.0 / (2 * self.mu)
        if abs(self.alpha * self.beta - target) > tol * max(1.0, target):
            raise ValueError(
                f"alpha*beta = {self.alpha * self.beta!r} but must equal 1/(2 mu) = {target!r}"
            )


def default_scales(mu: float = 1.0) -> tuple[float, float]:
    s = 1.0 / np.sqrt(2 * mu)
    return s, s


def phi_from_qp(pair: CanonicalPair, grid: Grid) -> StateVector:
    pair.check_constraint()
    return StateVector(pair.alpha * pair.q + 1j * pair.beta * pair.p, grid)


def qp_from_phi(state: StateVector, alpha: float, beta: float, mu: float | None = None) -> CanonicalPair:
    if alpha == 0 or beta == 0:
        raise ValueError("alpha and beta must be nonzero")
    if mu is None:
        mu = 1.0 / (2 * alpha * beta)
    phi = state.amplitudes
    return CanonicalPair(phi.real / alpha, phi.imag / beta, alpha, beta, mu)
