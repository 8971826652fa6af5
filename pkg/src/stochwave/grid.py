"""Periodic 1-D grid, state vectors and dense operator matrices.

Integrals over x become Riemann sums with weight ``dx``.  A two-point kernel
``A(x, x')`` is stored as the matrix ``dx * A(x_i, x_j)`` so that applying an
operator is a plain matrix-vector product and ``delta(x - x')`` maps to the
identity matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, GridMismatchError

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L/2, L/2)``."""

    n_points: int
    length: float
    spacing: float = field(init=False, compare=False)
    positions: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError(f"n_points must be an integer >= 2, got {self.n_points!r}")
        if not np.isfinite(self.length) or self.length <= 0:
            raise ValueError(f"length must be positive, got {self.length!r}")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "length", float(self.length))
        dx = self.length / self.n_points
        x = -0.5 * self.length + dx * np.arange(self.n_points)
        x.flags.writeable = False
        object.__setattr__(self, "spacing", dx)
        object.__setattr__(self, "positions", x)

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers in FFT order (Nyquist mode negative for even n)."""
        return 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)


def make_grid(n_points: int, length: float) -> Grid:
    return Grid(n_points, length)


@dataclass(eq=False)
class StateVector:
    """Complex field sampled on a grid."""

    amplitudes: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.grid.n_points,):
            raise DimensionMismatchError(
                f"state has shape {self.amplitudes.shape}, grid has {self.grid.n_points} points"
            )

    def norm(self) -> float:
        return float(inner_product(self, self).real)

    def normalized(self) -> "StateVector":
        return StateVector(self.amplitudes / np.sqrt(self.norm()), self.grid)

    def is_normalized(self, tol: float = 1e-10) -> bool:
        return abs(self.norm() - 1.0) <= tol

    def __mul__(self, c) -> "StateVector":
        return StateVector(c * self.amplitudes, self.grid)

    __rmul__ = __mul__


@dataclass(eq=False)
class OperatorMatrix:
    """Dense matrix acting on state vectors, ``(A phi)_i = sum_j A_ij phi_j``."""

    entries: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise DimensionMismatchError(f"operator must be square, got shape {self.entries.shape}")

    @classmethod
    def from_array(cls, a, tol: float = HERMITIAN_TOL) -> "OperatorMatrix":
        op = cls(a)
        op.hermitian = op.hermiticity_error() <= tol
        return op

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def H(self) -> "OperatorMatrix":
        return OperatorMatrix(self.entries.conj().T, self.hermitian)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def apply(self, state: StateVector) -> StateVector:
        if state.grid.n_points != self.dim:
            raise DimensionMismatchError(
                f"operator of dimension {self.dim} applied to state of length {state.grid.n_points}"
            )
        return StateVector(self.entries @ state.amplitudes, state.grid)

    def __matmul__(self, other):
        if isinstance(other, StateVector):
            return self.apply(other)
        if isinstance(other, OperatorMatrix):
            _check_dims(self, other)
            return OperatorMatrix(self.entries @ other.entries)
        return NotImplemented

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        _check_dims(self, other)
        return OperatorMatrix(self.entries + other.entries, self.hermitian and other.hermitian)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        _check_dims(self, other)
        return OperatorMatrix(self.entries - other.entries, self.hermitian and other.hermitian)

    def __mul__(self, c) -> "OperatorMatrix":
        return OperatorMatrix(c * self.entries, self.hermitian and np.isreal(c))

    __rmul__ = __mul__


def _check_dims(a: OperatorMatrix, b: OperatorMatrix) -> None:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"operator dimensions differ: {a.dim} vs {b.dim}")


def _hermitize(a: np.ndarray) -> np.ndarray:
    # exact hermiticity: entry_ji is bitwise conj(entry_ij)
    return 0.5 * (a + a.conj().T)


def inner_product(a: StateVector, b: StateVector) -> complex:
    """Weighted inner product ``dx * sum(conj(a) * b)``."""
    if a.grid != b.grid:
        raise GridMismatchError(f"states live on different grids: {a.grid} vs {b.grid}")
    return complex(a.grid.spacing * np.vdot(a.amplitudes, b.amplitudes))


def identity_operator(grid: Grid) -> OperatorMatrix:
    return OperatorMatrix(np.eye(grid.n_points), hermitian=True)


def position_operator(grid: Grid) -> OperatorMatrix:
    return OperatorMatrix(np.diag(grid.positions), hermitian=True)


def potential_operator(grid: Grid, potential) -> OperatorMatrix:
    v = np.asarray(potential, dtype=float)
    if v.shape != (grid.n_points,):
        raise DimensionMismatchError(
            f"potential has {v.size} samples, grid has {grid.n_points} points"
        )
    return OperatorMatrix(np.diag(v), hermitian=True)


def _spectral_multiplier(grid: Grid, symbol: np.ndarray) -> np.ndarray:
    """Dense matrix of ``F^-1 diag(symbol) F``, built column by column."""
    eye = np.eye(grid.n_points)
    return np.fft.ifft(symbol[:, None] * np.fft.fft(eye, axis=0), axis=0)


def momentum_operator(grid: Grid, mu: float = 1.0, scheme: str = "spectral") -> OperatorMatrix:
    """Matrix of ``-i mu d/dx`` on the periodic grid.

    ``scheme="spectral"`` is exact on every resolved plane wave;
    ``scheme="central_difference"`` uses the two-point symmetric stencil.
    """
    if scheme == "spectral":
        p = _spectral_multiplier(grid, mu * grid.wavenumbers)
    elif scheme == "central_difference":
        n = grid.n_points
        shift_fwd = np.roll(np.eye(n), 1, axis=1)  # (S phi)_j = phi_{j+1}
        p = -1j * mu * (shift_fwd - shift_fwd.T) / (2 * grid.spacing)
    else:
        raise ValueError(f"unknown momentum scheme {scheme!r}")
    return OperatorMatrix(_hermitize(p), hermitian=True)


def kinetic_operator(grid: Grid, mu: float = 1.0, mass: float = 1.0,
                     scheme: str = "spectral") -> OperatorMatrix:
    """``p^2 / 2m`` for the chosen momentum scheme."""
    if mass <= 0:
        raise ValueError(f"mass must be positive, got {mass!r}")
    if scheme == "spectral":
        k = _spectral_multiplier(grid, (mu * grid.wavenumbers) ** 2 / (2 * mass))
    else:
        p = momentum_operator(grid, mu, scheme).entries
        k = p @ p / (2 * mass)
    return OperatorMatrix(_hermitize(k), hermitian=True)


def harmonic_potential(grid: Grid, mass: float = 1.0, omega: float = 1.0) -> np.ndarray:
    return 0.5 * mass * omega**2 * grid.positions**2


def hamiltonian_build(grid: Grid, mu: float = 1.0, mass: float = 1.0, potential=None,
                      scheme: str = "spectral") -> OperatorMatrix:
    """``H = p^2/2m + V`` as a hermitian matrix; ``potential=None`` means V = 0."""
    if potential is None:
        potential = np.zeros(grid.n_points)
    h = kinetic_operator(grid, mu, mass, scheme).entries + potential_operator(grid, potential).entries
    return OperatorMatrix(h, hermitian=True)


def commutator(a: OperatorMatrix, b: OperatorMatrix) -> OperatorMatrix:
    _check_dims(a, b)
    return OperatorMatrix(a.entries @ b.entries - b.entries @ a.entries)


def spectrum(op: OperatorMatrix) -> np.ndarray:
    """Ascending eigenvalues of a hermitian operator."""
    return np.linalg.eigvalsh(op.entries)


def eigenstates(h: OperatorMatrix, grid: Grid, count: int | None = None):
    """Lowest eigenpairs of ``h``; states are normalized in the weighted norm."""
    energies, vecs = np.linalg.eigh(h.entries)
    count = len(energies) if count is None else count
    vecs = vecs[:, :count] / np.sqrt(grid.spacing)
    return energies[:count], [StateVector(vecs[:, i], grid) for i in range(count)]


# -- common initial states ----------------------------------------------------

def gaussian_state(grid: Grid, center: float = 0.0, width: float = 1.0, momentum: float = 0.0,
                   mu: float = 1.0) -> StateVector:
    """Normalized Gaussian packet whose density has standard deviation ``width``."""
    x = grid.positions
    amp = np.exp(-((x - center) ** 2) / (4 * width**2) + 1j * momentum * x / mu)
    return StateVector(amp, grid).normalized()


def coherent_state(grid: Grid, displacement: float, mass: float = 1.0, omega: float = 1.0,
                   mu: float = 1.0) -> StateVector:
    """Displaced harmonic ground state."""
    return gaussian_state(grid, displacement, np.sqrt(mu / (2 * mass * omega)), 0.0, mu)


def plane_wave(grid: Grid, mode: int) -> StateVector:
    """``exp(i 2 pi mode x / L)`` normalized on the grid."""
    k = 2 * np.pi * mode / grid.length
    return StateVector(np.exp(1j * k * grid.positions), grid).normalized()
