"""Norm-preserving stochastic evolution of the field phi and ensemble statistics.

One step of the literal scheme is

    dphi = tau * H phi / (i mu) + i sqrt(tau) * xi * G phi - tau/2 * K phi,

with a single scalar ``xi`` per step (zero mean, unit variance) and
``K = G^+ G``.  Trajectory ``m`` of an ensemble draws its noise from the stream
``SeedSequence(base_seed, spawn_key=(m,))`` so any subset of trajectories can be
reproduced on its own, in any order.
"""

from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .density import DensityMatrix, Propagator, snapshot_steps
from .errors import DimensionMismatchError, NotNormalizedError, NumericalInstabilityError
from .functionals import BilinearFunctional
from .grid import Grid, OperatorMatrix, StateVector, momentum_operator, position_operator

XI_DISTRIBUTIONS = ("standard_gaussian", "rademacher")
SCHEMES = ("euler", "exact_split")


@dataclass(eq=False)
class NoiseModel:
    g: OperatorMatrix
    k: OperatorMatrix
    gamma: float | None = None
    xi_distribution: str = "standard_gaussian"
    phase_preserving_norm: bool = False

    @property
    def dim(self) -> int:
        return self.g.dim

    @functools.cached_property
    def _g_eig(self):
        return np.linalg.eigh(self.g.entries)

    def phase_kick(self, vec: np.ndarray, theta: float) -> np.ndarray:
        """``exp(i theta G) vec`` for hermitian G."""
        if not self.phase_preserving_norm:
            raise ValueError("exact phase kick needs a hermitian G")
        if self.gamma is not None:
            return np.exp(1j * theta * self.gamma) * vec
        vals, w = self._g_eig
        return w @ (np.exp(1j * theta * vals) * (w.conj().T @ vec))


def make_noise_model(g, xi_distribution: str = "standard_gaussian",
                     tol: float = 1e-12) -> NoiseModel:
    """Build the noise pair (G, K = G^+ G) and classify G."""
    if not isinstance(g, OperatorMatrix):
        g = OperatorMatrix(g)
    if xi_distribution not in XI_DISTRIBUTIONS:
        raise ValueError(f"xi_distribution must be one of {XI_DISTRIBUTIONS}, got {xi_distribution!r}")
    gm = g.entries
    k = OperatorMatrix(gm.conj().T @ gm, hermitian=True)
    k.entries = 0.5 * (k.entries + k.entries.conj().T)
    hermitian = g.hermiticity_error() <= tol * max(1.0, float(np.max(np.abs(gm), initial=0.0)))
    g = OperatorMatrix(gm, hermitian)
    c = gm[0, 0]
    gamma = None
    if c.imag == 0 and c.real >= 0 and np.array_equal(gm, c * np.eye(g.dim)):
        gamma = float(c.real)
    return NoiseModel(g, k, gamma, xi_distribution, hermitian)


def dephasing_noise(n_points: int, gamma: float,
                    xi_distribution: str = "standard_gaussian") -> NoiseModel:
    """``G = gamma * identity``: a random global phase per step."""
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma!r}")
    return make_noise_model(gamma * np.eye(n_points), xi_distribution)


def lowering_operator(grid: Grid, mass: float = 1.0, omega: float = 1.0,
                      mu: float = 1.0) -> OperatorMatrix:
    """Harmonic-oscillator annihilation operator ``(m w x + i p) / sqrt(2 m w mu)``."""
    x = position_operator(grid).entries
    p = momentum_operator(grid, mu).entries
    return OperatorMatrix((mass * omega * x + 1j * p) / np.sqrt(2 * mass * omega * mu))


# -- random streams -------------------------------------------------------------------

def trajectory_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=(index,)))


def draw_xi(rng: np.random.Generator, size: int, distribution: str = "standard_gaussian",
            substeps: int = 1) -> np.ndarray:
    """Draw ``size`` noise values.

    With ``substeps > 1`` each value is the normalized sum of ``substeps``
    finer Gaussian draws, so runs at ``tau`` and ``tau / substeps`` sharing a
    stream see the same underlying Brownian path.
    """
    if distribution == "standard_gaussian":
        if substeps == 1:
            return rng.standard_normal(size)
        fine = rng.standard_normal(size * substeps).reshape(size, substeps)
        return fine.sum(axis=1) / np.sqrt(substeps)
    if distribution == "rademacher":
        if substeps != 1:
            raise ValueError("coupled noise refinement is only defined for Gaussian xi")
        return np.where(rng.random(size) < 0.5, -1.0, 1.0)
    raise ValueError(f"unknown xi distribution {distribution!r}")


def suggested_tau(h: OperatorMatrix) -> float:
    return 0.1 / max(float(np.linalg.norm(h.entries, 2)), 1e-300)


# -- single trajectories ---------------------------------------------------------------

@dataclass(eq=False)
class TrajectoryState:
    state: StateVector
    time: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: trajectory_rng(0, 0))
    step: int = 0
    stream: tuple = (0, 0)


def _check_step_inputs(traj, noise, tau, dim):
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    n = traj.state.grid.n_points
    if noise.dim != n or dim != n:
        raise DimensionMismatchError(f"operators of dimension {dim}/{noise.dim} on {n}-point state")


def step_euler(traj: TrajectoryState, h: OperatorMatrix, noise: NoiseModel, tau: float,
               mu: float = 1.0, xi: float | None = None) -> TrajectoryState:
    _check_step_inputs(traj, noise, tau, h.dim)
    if xi is None:
        xi = draw_xi(traj.rng, 1, noise.xi_distribution)[0]
    phi = traj.state.amplitudes
    f = (h.entries @ phi) / (1j * mu)
    g = noise.g.entries @ phi
    k = noise.k.entries @ phi
    new = phi + tau * f + 1j * np.sqrt(tau) * xi * g - 0.5 * tau * k
    if not np.isfinite(new).all():
        raise NumericalInstabilityError(
            f"non-finite amplitudes after step {traj.step + 1}; try tau <= {suggested_tau(h):.3g}",
            "stochastic_dynamics", step=traj.step + 1, suggested_tau=suggested_tau(h))
    return replace(traj, state=StateVector(new, traj.state.grid), time=traj.time + tau,
                   step=traj.step + 1)


def step_exact_split(traj: TrajectoryState, propagator, noise: NoiseModel, tau: float,
                     xi: float | None = None) -> TrajectoryState:
    """``phi <- exp(i sqrt(tau) xi G) U(tau) phi``; exact norm conservation for hermitian G.

    ``propagator`` is the one-step unitary, either as a matrix or as a
    :class:`Propagator`.
    """
    if not noise.phase_preserving_norm:
        raise ValueError("exact_split requires a hermitian G; use the euler scheme")
    u = propagator.matrix(tau) if isinstance(propagator, Propagator) else np.asarray(propagator)
    _check_step_inputs(traj, noise, tau, u.shape[0])
    if xi is None:
        xi = draw_xi(traj.rng, 1, noise.xi_distribution)[0]
    new = noise.phase_kick(u @ traj.state.amplitudes, np.sqrt(tau) * xi)
    return replace(traj, state=StateVector(new, traj.state.grid), time=traj.time + tau,
                   step=traj.step + 1)


@dataclass(eq=False)
class TrajectoryRecord:
    times: np.ndarray
    amplitudes: np.ndarray  # (n_snapshots, n)
    grid: Grid
    stream: tuple

    def __len__(self):
        return len(self.times)

    def state(self, i) -> StateVector:
        return StateVector(self.amplitudes[i], self.grid)

    def norms(self) -> np.ndarray:
        return self.grid.spacing * np.sum(np.abs(self.amplitudes) ** 2, axis=1)

    def expectation(self, f: BilinearFunctional) -> np.ndarray:
        a = self.amplitudes
        return self.grid.spacing * np.sum(a.conj() * (a @ f.kernel.entries.T), axis=1)


def _require_normalized(initial: StateVector):
    if not initial.is_normalized(1e-8):
        raise NotNormalizedError(f"initial state has norm {initial.norm()!r}")


def run_trajectory(initial: StateVector, h: OperatorMatrix, noise: NoiseModel, tau: float,
                   n_steps: int, scheme: str = "exact_split", seed: int = 0, stride: int = 1,
                   mu: float = 1.0, index: int = 0) -> TrajectoryRecord:
    """Evolve one trajectory, recording every ``stride`` steps and the final one."""
    _require_normalized(initial)
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    steps = snapshot_steps(n_steps, stride)
    xi = draw_xi(trajectory_rng(seed, index), n_steps, noise.xi_distribution)
    u = Propagator(h, mu).matrix(tau) if scheme == "exact_split" else None
    traj = TrajectoryState(initial, 0.0, None, 0, (seed, index))
    out = np.empty((len(steps), initial.grid.n_points), dtype=complex)
    j = 0
    for step in range(n_steps + 1):
        if step > 0:
            if scheme == "euler":
                traj = step_euler(traj, h, noise, tau, mu, xi=xi[step - 1])
            else:
                traj = step_exact_split(traj, u, noise, tau, xi=xi[step - 1])
        if steps[j] == step:
            out[j] = traj.state.amplitudes
            j += 1
    return TrajectoryRecord(steps * tau, out, initial.grid, (seed, index))


# -- ensembles -----------------------------------------------------------------------

@dataclass(eq=False)
class EnsembleAccumulator:
    """Running sums over trajectories, one slot per recorded time.

    Besides the first and second moments of phi it keeps the pseudo-covariance
    ``sum phi phi^T`` (needed for the error bar of ``|<phi>|``) and the sums and
    squared sums of per-trajectory observables.
    """

    times: np.ndarray
    grid: Grid
    labels: tuple
    count: int
    sum_phi: np.ndarray
    sum_outer: np.ndarray
    sum_pseudo: np.ndarray
    sum_norm: np.ndarray
    sum_norm_sq: np.ndarray
    obs_sum: np.ndarray
    obs_sq: np.ndarray

    @classmethod
    def empty(cls, times, grid: Grid, labels=()) -> "EnsembleAccumulator":
        s, n, k = len(times), grid.n_points, len(labels)
        return cls(np.asarray(times, dtype=float), grid, tuple(labels), 0,
                   np.zeros((s, n), complex), np.zeros((s, n, n), complex),
                   np.zeros((s, n, n), complex), np.zeros(s), np.zeros(s),
                   np.zeros((s, k)), np.zeros((s, k)))

    def record(self, slot: int, phi: np.ndarray, kernels) -> None:
        """Add a batch of trajectories (columns of ``phi``) to time slot ``slot``."""
        dx = self.grid.spacing
        self.sum_phi[slot] += phi.sum(axis=1)
        self.sum_outer[slot] += phi @ phi.conj().T
        self.sum_pseudo[slot] += phi @ phi.T
        norms = dx * np.sum(phi.real**2 + phi.imag**2, axis=0)
        self.sum_norm[slot] += norms.sum()
        self.sum_norm_sq[slot] += (norms**2).sum()
        for i, a in enumerate(kernels):
            vals = dx * np.sum(phi.conj() * (a @ phi), axis=0).real
            self.obs_sum[slot, i] += vals.sum()
            self.obs_sq[slot, i] += (vals**2).sum()

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        if self.labels != other.labels or not np.array_equal(self.times, other.times):
            raise ValueError("cannot merge accumulators with different layouts")
        return EnsembleAccumulator(
            self.times, self.grid, self.labels, self.count + other.count,
            self.sum_phi + other.sum_phi, self.sum_outer + other.sum_outer,
            self.sum_pseudo + other.sum_pseudo, self.sum_norm + other.sum_norm,
            self.sum_norm_sq + other.sum_norm_sq, self.obs_sum + other.obs_sum,
            self.obs_sq + other.obs_sq)

    def _require(self):
        if self.count < 1:
            raise ValueError("accumulator is empty")

    @staticmethod
    def _stderr(s1, s2, m):
        if m < 2:
            return np.full(np.shape(s1), np.nan)
        var = (s2 - s1 * s1 / m) / (m - 1)
        return np.sqrt(np.maximum(var, 0.0) / m)

    def mean_state(self, slot: int = -1) -> StateVector:
        self._require()
        return StateVector(self.sum_phi[slot] / self.count, self.grid)

    def covariance(self, slot: int = -1) -> DensityMatrix:
        return estimate_covariance(self, slot)

    def mean_norm(self) -> np.ndarray:
        self._require()
        return self.sum_norm / self.count

    def norm_stderr(self) -> np.ndarray:
        return self._stderr(self.sum_norm, self.sum_norm_sq, self.count)

    def observable_mean(self, label: str) -> np.ndarray:
        self._require()
        return self.obs_sum[:, self.labels.index(label)] / self.count

    def observable_stderr(self, label: str) -> np.ndarray:
        i = self.labels.index(label)
        return self._stderr(self.obs_sum[:, i], self.obs_sq[:, i], self.count)

    def sigma_norm(self) -> np.ndarray:
        """``|<phi>|`` in the weighted norm, per recorded time."""
        self._require()
        sigma = self.sum_phi / self.count
        return np.sqrt(self.grid.spacing * np.sum(np.abs(sigma) ** 2, axis=1))

    def sigma_norm_stderr(self) -> np.ndarray:
        """Delta-method error bar of ``|<phi>|``.

        Linearizing around the estimate, ``|<phi>|`` fluctuates like the
        per-trajectory scalar ``s = Re(dx u^+ phi)`` with ``u = <phi>/|<phi>|``;
        its second moment follows from the covariance and pseudo-covariance.
        """
        self._require()
        m, dx = self.count, self.grid.spacing
        out = np.full(len(self.times), np.nan)
        if m < 2:
            return out
        sig = self.sigma_norm()
        for s in range(len(self.times)):
            if sig[s] == 0:
                out[s] = 0.0
                continue
            u = self.sum_phi[s] / m / sig[s]
            w_abs = dx**2 * np.vdot(u, self.sum_outer[s] @ u).real / m
            w_sq = dx**2 * (u.conj() @ self.sum_pseudo[s] @ u.conj()) / m
            second = 0.5 * (w_sq.real + w_abs)
            var = (second - sig[s] ** 2) * m / (m - 1)
            out[s] = np.sqrt(max(var, 0.0) / m)
        return out

    def purity(self) -> np.ndarray:
        self._require()
        return np.array([estimate_covariance(self, s).purity() for s in range(len(self.times))])


def estimate_covariance(acc: EnsembleAccumulator, slot: int = -1) -> DensityMatrix:
    """``(1/M) sum_m phi_m phi_m^+`` at one recorded time."""
    if acc.count < 1:
        raise ValueError("cannot estimate a covariance from an empty accumulator")
    r = acc.sum_outer[slot] / acc.count
    return DensityMatrix(0.5 * (r + r.conj().T), acc.grid)


class _BatchStepper:
    """Advances a block of trajectories (one per column) with one matmul per step."""

    def __init__(self, h: OperatorMatrix, noise: NoiseModel, tau: float, scheme: str, mu: float):
        n = h.dim
        if noise.dim != n:
            raise DimensionMismatchError(f"G has dimension {noise.dim}, H has {n}")
        self.h = h
        self.root_tau = np.sqrt(tau)
        self.basis = None  # eigenbasis of G, when stepping in it
        if scheme == "euler":
            drift = np.eye(n) + tau * (h.entries / (1j * mu) - 0.5 * noise.k.entries)
            if noise.gamma is not None:
                self.kind, self.a, self.gamma = "euler_scalar", drift, noise.gamma
            else:
                self.kind, self.a = "euler", np.vstack([drift, noise.g.entries])
        elif scheme == "exact_split":
            if not noise.phase_preserving_norm:
                raise ValueError("exact_split requires a hermitian G; use the euler scheme")
            u = Propagator(h, mu).matrix(tau)
            if noise.gamma is not None:
                self.kind, self.a, self.gamma = "split_scalar", u, noise.gamma
            else:
                vals, w = noise._g_eig
                self.kind, self.a, self.gvals = "split", w.conj().T @ u @ w, vals
                self.basis = w
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.n = n

    def into(self, phi):
        return phi if self.basis is None else self.basis.conj().T @ phi

    def out(self, phi):
        return phi if self.basis is None else self.basis @ phi

    def step(self, phi, xi):
        kind = self.kind
        if kind == "euler":
            y = self.a @ phi
            return y[: self.n] + (1j * self.root_tau * xi) * y[self.n:]
        if kind == "euler_scalar":
            return self.a @ phi + (1j * self.root_tau * self.gamma * xi) * phi
        if kind == "split_scalar":
            return (self.a @ phi) * np.exp(1j * self.root_tau * self.gamma * xi)
        return np.exp(1j * self.root_tau * np.outer(self.gvals, xi)) * (self.a @ phi)


def _run_block(indices, initial, stepper, noise, n_steps, steps, base_seed, kernels, labels,
               substeps):
    grid = initial.grid
    b = len(indices)
    xi = np.empty((n_steps, b))
    for c, m in enumerate(indices):
        xi[:, c] = draw_xi(trajectory_rng(base_seed, m), n_steps, noise.xi_distribution, substeps)
    phi = np.repeat(stepper.into(initial.amplitudes)[:, None], b, axis=1)
    acc = EnsembleAccumulator.empty(steps * 0.0, grid, labels)
    acc.count = b
    j = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(n_steps + 1):
            if step > 0:
                phi = stepper.step(phi, xi[step - 1])
                if not np.isfinite(phi.sum()):
                    bad = int(np.flatnonzero(~np.isfinite(phi).all(axis=0))[0])
                    tau_hint = suggested_tau(stepper.h)
                    raise NumericalInstabilityError(
                        f"trajectory {indices[bad]}: non-finite amplitudes after step {step}; "
                        f"try tau <= {tau_hint:.3g}", "stochastic_dynamics", step=step,
                        trajectory=int(indices[bad]), suggested_tau=tau_hint)
            if j < len(steps) and steps[j] == step:
                acc.record(j, stepper.out(phi), kernels)
                j += 1
    return acc


def run_ensemble(initial: StateVector, h: OperatorMatrix, noise: NoiseModel, tau: float,
                 n_steps: int, m_trajectories: int, scheme: str = "euler", base_seed: int = 0,
                 stride: int = 1, mu: float = 1.0, observables=(), chunk_size: int = 500,
                 threads: int = 1, noise_substeps: int = 1) -> EnsembleAccumulator:
    """Evolve ``m_trajectories`` independent trajectories and accumulate moments.

    Trajectories are processed in fixed blocks of ``chunk_size`` and the block
    sums are reduced in block order, so the result does not depend on
    ``threads``.  ``observables`` are bilinear functionals whose
    per-trajectory values are tracked for error bars.
    """
    _require_normalized(initial)
    if m_trajectories < 1:
        raise ValueError(f"m_trajectories must be >= 1, got {m_trajectories}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    steps = snapshot_steps(n_steps, stride)
    stepper = _BatchStepper(h, noise, tau, scheme, mu)
    labels = tuple(f.label for f in observables)
    if len(set(labels)) != len(labels):
        raise ValueError(f"observable labels must be unique, got {labels}")
    kernels = [f.kernel.entries for f in observables]
    blocks = [range(s, min(s + chunk_size, m_trajectories))
              for s in range(0, m_trajectories, chunk_size)]
    work = functools.partial(_run_block, initial=initial, stepper=stepper, noise=noise,
                             n_steps=n_steps, steps=steps, base_seed=base_seed,
                             kernels=kernels, labels=labels, substeps=noise_substeps)
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    total = functools.reduce(EnsembleAccumulator.merge, parts)
    total.times = steps * tau
    return total
