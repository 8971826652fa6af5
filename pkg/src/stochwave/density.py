"""Covariance (density matrix) flows and Schrodinger propagation.

``DensityMatrix.entries`` holds the kernel ``rho(x_i, x_j)``; the operator it
represents is ``dx * entries`` and traces carry the same ``dx`` weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NotNormalizedError, NumericalInstabilityError
from .grid import Grid, OperatorMatrix, StateVector


@dataclass(eq=False)
class DensityMatrix:
    entries: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        n = self.grid.n_points
        if self.entries.shape != (n, n):
            raise DimensionMismatchError(f"density of shape {self.entries.shape} on {n}-point grid")

    def operator(self) -> np.ndarray:
        return self.grid.spacing * self.entries

    def trace(self) -> complex:
        return complex(self.grid.spacing * np.trace(self.entries))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.operator() + self.operator().conj().T))

    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues()[0])

    def purity(self) -> float:
        return purity(self)


def purity(rho: DensityMatrix) -> float:
    """``Tr(rho^2)`` of the represented operator."""
    r = rho.entries
    return float(rho.grid.spacing**2 * np.sum(r * r.T).real)


def pure_state_density(psi: StateVector, tol: float = 1e-10) -> DensityMatrix:
    norm = psi.norm()
    if abs(norm - 1.0) > tol:
        raise NotNormalizedError(f"pure_state_density needs a normalized state, norm is {norm!r}")
    a = psi.amplitudes
    return DensityMatrix(np.outer(a, a.conj()), psi.grid)


def maximally_mixed(grid: Grid) -> DensityMatrix:
    return DensityMatrix(np.eye(grid.n_points) / grid.length, grid)


def _check(rho: DensityMatrix, op: OperatorMatrix) -> None:
    if op.dim != rho.grid.n_points:
        raise DimensionMismatchError(
            f"operator of dimension {op.dim} against {rho.grid.n_points}-point density"
        )


def _liouville(r, h, mu):
    return (h @ r - r @ h) / (1j * mu)


def _lindblad(r, h, g, k, mu):
    # r is hermitian inside the integrators, so rho K = (K rho)^+
    gr = g @ r
    kr = k @ r
    return _liouville(r, h, mu) + gr @ g.conj().T - 0.5 * (kr + kr.conj().T)


def liouville_rhs(rho: DensityMatrix, h: OperatorMatrix, mu: float = 1.0) -> DensityMatrix:
    """``(H rho - rho H) / (i mu)``."""
    _check(rho, h)
    return DensityMatrix(_liouville(rho.entries, h.entries, mu), rho.grid)


def lindblad_rhs(rho: DensityMatrix, h: OperatorMatrix, noise, mu: float = 1.0) -> DensityMatrix:
    """Liouville term plus ``G rho G^+ - (G^+G rho + rho G^+G)/2``."""
    _check(rho, h)
    _check(rho, noise.g)
    r, g, k = rho.entries, noise.g.entries, noise.k.entries
    rate = _liouville(r, h.entries, mu) + g @ r @ g.conj().T - 0.5 * (k @ r + r @ k)
    return DensityMatrix(rate, rho.grid)


# -- propagators -------------------------------------------------------------------

class Propagator:
    """Exact unitary evolution through one eigendecomposition of ``H``."""

    def __init__(self, h: OperatorMatrix, mu: float = 1.0):
        if not h.hermitian:
            raise ValueError("exact propagation needs a hermitian Hamiltonian")
        self.energies, self.vectors = np.linalg.eigh(h.entries)
        self.mu = mu

    def phases(self, t: float) -> np.ndarray:
        return np.exp(-1j * self.energies * t / self.mu)

    def matrix(self, t: float) -> np.ndarray:
        v = self.vectors
        return (v * self.phases(t)) @ v.conj().T

    def evolve_state(self, psi: np.ndarray, t: float) -> np.ndarray:
        v = self.vectors
        return v @ (self.phases(t) * (v.conj().T @ psi))

    def evolve_density(self, rho: np.ndarray, t: float) -> np.ndarray:
        v = self.vectors
        ph = self.phases(t)
        r = v.conj().T @ rho @ v
        return v @ (ph[:, None] * r * ph.conj()[None, :]) @ v.conj().T


@dataclass(eq=False)
class DensitySeries:
    times: np.ndarray
    entries: np.ndarray  # (n_times, n, n)
    grid: Grid

    def __len__(self):
        return len(self.times)

    def __getitem__(self, i) -> DensityMatrix:
        return DensityMatrix(self.entries[i], self.grid)


@dataclass(eq=False)
class StateSeries:
    times: np.ndarray
    amplitudes: np.ndarray  # (n_times, n)
    grid: Grid

    def __len__(self):
        return len(self.times)

    def __getitem__(self, i) -> StateVector:
        return StateVector(self.amplitudes[i], self.grid)


def snapshot_steps(n_steps: int, stride: int) -> np.ndarray:
    """Step indices recorded for a run: every ``stride`` steps plus the last."""
    if n_steps < 0 or stride < 1:
        raise ValueError(f"need n_steps >= 0 and stride >= 1, got {n_steps}, {stride}")
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return np.array(steps)


def _rk4_step(f, r, tau):
    k1 = f(r)
    k2 = f(r + 0.5 * tau * k1)
    k3 = f(r + 0.5 * tau * k2)
    k4 = f(r + tau * k3)
    out = r + (tau / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return 0.5 * (out + out.conj().T)


def integrate_density(rho0: DensityMatrix, h: OperatorMatrix, tau: float, n_steps: int,
                      rhs: str = "liouville", method: str = "rk4", noise=None, mu: float = 1.0,
                      stride: int = 1) -> DensitySeries:
    """Integrate the Liouville or Lindblad flow from ``rho0``.

    ``method="exact_unitary_conjugation"`` is only valid for the Liouville flow
    and conjugates by the exact propagator; ``"rk4"`` handles both and
    re-symmetrizes after each step.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    _check(rho0, h)
    if rhs not in ("liouville", "lindblad"):
        raise ValueError(f"unknown rhs {rhs!r}")
    if rhs == "lindblad" and noise is None:
        raise ValueError("lindblad flow needs a noise model")
    steps = snapshot_steps(n_steps, stride)
    out = np.empty((len(steps), *rho0.entries.shape), dtype=complex)

    if method == "exact_unitary_conjugation":
        if rhs != "liouville":
            raise ValueError("exact_unitary_conjugation only applies to the liouville flow")
        prop = Propagator(h, mu)
        for i, s in enumerate(steps):
            out[i] = prop.evolve_density(rho0.entries, s * tau)
        return DensitySeries(steps * tau, out, rho0.grid)

    if method != "rk4":
        raise ValueError(f"unknown method {method!r}")
    hm = h.entries
    if rhs == "liouville":
        f = lambda r: _liouville(r, hm, mu)  # noqa: E731
    else:
        _check(rho0, noise.g)
        gm, km = noise.g.entries, noise.k.entries
        f = lambda r: _lindblad(r, hm, gm, km, mu)  # noqa: E731

    r = rho0.entries.copy()
    j = 0
    # overflow is detected and reported below, not warned about
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(n_steps + 1):
            if step > 0:
                r = _rk4_step(f, r, tau)
                if not np.isfinite(r).all():
                    raise NumericalInstabilityError(
                        f"non-finite density entries at step {step}", "density_dynamics",
                        step=step, suggested_tau=2.0 / max(np.linalg.norm(hm, 2), 1e-300))
            if j < len(steps) and steps[j] == step:
                out[j] = r
                j += 1
    return DensitySeries(steps * tau, out, rho0.grid)


def schrodinger_propagate(psi0: StateVector, h: OperatorMatrix, tau: float, n_steps: int,
                          mu: float = 1.0, method: str = "eigendecomposition",
                          stride: int = 1) -> StateSeries:
    """Solve ``i mu dpsi/dt = H psi``.

    The eigendecomposition route evaluates ``exp(-iHt/mu) psi0`` at each
    recorded time directly; Crank-Nicolson iterates the Cayley map.
    """
    if not psi0.is_normalized(1e-8):
        raise NotNormalizedError(f"initial state has norm {psi0.norm()!r}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    steps = snapshot_steps(n_steps, stride)
    out = np.empty((len(steps), psi0.grid.n_points), dtype=complex)
    if method == "eigendecomposition":
        prop = Propagator(h, mu)
        for i, s in enumerate(steps):
            out[i] = prop.evolve_state(psi0.amplitudes, s * tau)
    elif method == "crank_nicolson":
        n = h.dim
        a = 0.5j * tau / mu * h.entries
        cayley = np.linalg.solve(np.eye(n) + a, np.eye(n) - a)
        psi = psi0.amplitudes.copy()
        j = 0
        for step in range(n_steps + 1):
            if step > 0:
                psi = cayley @ psi
            if j < len(steps) and steps[j] == step:
                out[j] = psi
                j += 1
        if not np.isfinite(out).all():
            raise NumericalInstabilityError("non-finite amplitudes", "density_dynamics")
    else:
        raise ValueError(f"unknown method {method!r}")
    return StateSeries(steps * tau, out, psi0.grid)


@dataclass
class PureConsistencyReport:
    times: np.ndarray
    deviations: np.ndarray
    max_deviation: float
    tolerance: float
    passed: bool


def consistency_check_pure(rho_series: DensitySeries, psi_series: StateSeries,
                           tol: float = 1e-10) -> PureConsistencyReport:
    """Max-entry distance between ``rho(t)`` and ``psi(t) psi(t)^+`` at each stamp."""
    if rho_series.grid != psi_series.grid:
        raise DimensionMismatchError("series live on different grids")
    if len(rho_series.times) != len(psi_series.times) or not np.allclose(
            rho_series.times, psi_series.times, rtol=0, atol=1e-12):
        raise ValueError("time stamps of the two series do not match")
    psi = psi_series.amplitudes
    outer = psi[:, :, None] * psi.conj()[:, None, :]
    dev = np.max(np.abs(rho_series.entries - outer), axis=(1, 2))
    worst = float(dev.max()) if len(dev) else 0.0
    return PureConsistencyReport(rho_series.times, dev, worst, tol, worst <= tol)
