"""Oracles and experiment drivers that hold the stochastic ensemble against the
covariance flows and against closed-form solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .density import (DensitySeries, Propagator, integrate_density, pure_state_density,
                      snapshot_steps)
from .functionals import BilinearFunctional, expectation_from_covariance
from .grid import (Grid, OperatorMatrix, StateVector, coherent_state, gaussian_state,
                   hamiltonian_build, harmonic_potential, momentum_operator, position_operator)
from .stochastic import (EnsembleAccumulator, NoiseModel, dephasing_noise, make_noise_model,
                         run_ensemble)


@dataclass
class ComparisonReport:
    labels: list
    times: np.ndarray
    ensemble: np.ndarray   # (n_times, n_labels)
    stderr: np.ndarray
    reference: np.ndarray
    n_sigma: float = 3.0
    atol: float = 1e-10
    deviation: np.ndarray = field(init=False)
    normalized_deviation: np.ndarray = field(init=False)
    max_normalized_deviation: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        se = np.nan_to_num(np.asarray(self.stderr, dtype=float), nan=0.0)
        self.stderr = se
        self.deviation = np.abs(self.ensemble - self.reference)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.deviation <= self.atol, 0.0, self.deviation / se)
        self.normalized_deviation = z
        self.max_normalized_deviation = float(np.max(z)) if z.size else 0.0
        self.passed = bool(np.all(self.deviation <= self.n_sigma * se + self.atol))

    def failures(self, label=None):
        bad = self.deviation > self.n_sigma * self.stderr + self.atol
        out = []
        for s, k in zip(*np.nonzero(bad)):
            if label is None or self.labels[k] == label:
                out.append((self.labels[k], float(self.times[s]), float(self.normalized_deviation[s, k])))
        return out

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {'/'.join(self.labels)}: max |dev| = "
                f"{self.max_normalized_deviation:.3g} stderr over {len(self.times)} stamps "
                f"(limit {self.n_sigma:g} stderr + {self.atol:g})")


@dataclass
class ConvergenceReport:
    parameter: str
    values: np.ndarray
    errors: np.ndarray
    stderr: np.ndarray
    slope: float
    expected_slope: float
    slope_tolerance: float
    status: str  # "pass", "fail" or "inconclusive"

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    @property
    def ratios(self) -> np.ndarray:
        """Error at each value divided by the error at the next (smaller) one."""
        return self.errors[:-1] / self.errors[1:]

    def summary(self) -> str:
        return (f"{self.status.upper()} {self.parameter} sweep: slope {self.slope:.3f} "
                f"(expected {self.expected_slope:g} +- {self.slope_tolerance:g}), "
                f"errors {np.array2string(self.errors, precision=3)}")


def _check_stamps(times_a, times_b):
    if len(times_a) != len(times_b) or not np.allclose(times_a, times_b, rtol=0, atol=1e-12):
        raise ValueError("time stamps of ensemble and reference differ")


def compare_ensemble_vs_density(acc: EnsembleAccumulator, reference: DensitySeries,
                                observables, n_sigma: float = 3.0,
                                atol: float = 1e-10) -> ComparisonReport:
    """Compare ``<A>`` from the ensemble covariance with ``<A>`` from ``reference``.

    Every observable must have been tracked by the ensemble run (matched by
    label) so its standard error is available.
    """
    if acc.grid != reference.grid:
        raise ValueError("ensemble and reference live on different grids")
    _check_stamps(acc.times, reference.times)
    labels = [f.label for f in observables]
    s, k = len(acc.times), len(observables)
    ens, ref, se = np.empty((s, k)), np.empty((s, k)), np.empty((s, k))
    for j, f in enumerate(observables):
        se[:, j] = acc.observable_stderr(f.label)
        for i in range(s):
            ens[i, j] = expectation_from_covariance(f, acc.covariance(i)).real
            ref[i, j] = expectation_from_covariance(f, reference[i]).real
    return ComparisonReport(labels, acc.times.copy(), ens, se, ref, n_sigma, atol)


def standard_observables(grid: Grid, h: OperatorMatrix, mu: float = 1.0):
    return [BilinearFunctional(position_operator(grid), "x"),
            BilinearFunctional(momentum_operator(grid, mu), "p"),
            BilinearFunctional(h, "H")]


def mean_field_flow(sigma0: StateVector, h: OperatorMatrix, noise: NoiseModel, times,
                    mu: float = 1.0) -> np.ndarray:
    """Solve ``d sigma/dt = H sigma/(i mu) - K sigma/2`` at the given times."""
    gen = h.entries / (1j * mu) - 0.5 * noise.k.entries
    return np.array([expm(gen * t) @ sigma0.amplitudes for t in times])


def euler_moment_flow(rho0, h: OperatorMatrix, noise: NoiseModel, tau: float, n_steps: int,
                      mu: float = 1.0, stride: int = 1) -> DensitySeries:
    """Exact expected covariance of the literal Euler scheme.

    With ``phi' = (B + i sqrt(tau) xi G) phi`` and ``xi`` independent of
    ``phi``, ``E[phi' phi'^+] = B rho B^+ + tau G rho G^+`` for any ``xi`` of
    zero mean and unit variance.
    """
    n = h.dim
    b = np.eye(n) + tau * (h.entries / (1j * mu) - 0.5 * noise.k.entries)
    g = noise.g.entries
    steps = snapshot_steps(n_steps, stride)
    out = np.empty((len(steps), n, n), dtype=complex)
    r = rho0.entries.copy()
    j = 0
    for step in range(n_steps + 1):
        if step > 0:
            r = b @ r @ b.conj().T + tau * (g @ r @ g.conj().T)
        if steps[j] == step:
            out[j] = r
            j += 1
    return DensitySeries(steps * tau, out, rho0.grid)


def mean_decay_experiment(h: OperatorMatrix, gamma: float, tau: float, n_steps: int,
                          m_trajectories: int, initial: StateVector, scheme: str = "exact_split",
                          base_seed: int = 0, stride: int = 1, mu: float = 1.0,
                          xi_distribution: str = "standard_gaussian", n_sigma: float = 3.0,
                          threads: int = 1) -> ComparisonReport:
    """Phase noise ``G = gamma * I``: the mean field decays, the covariance does not.

    Row ``sigma_ratio`` compares ``|<phi>(t)| / |<phi>(0)|`` with
    ``exp(-gamma^2 t / 2)``; rows ``x``, ``p`` and ``H`` compare the ensemble
    covariance with the noiseless Liouville flow at the same stamps.
    """
    grid = initial.grid
    noise = dephasing_noise(grid.n_points, gamma, xi_distribution)
    observables = standard_observables(grid, h, mu)
    acc = run_ensemble(initial, h, noise, tau, n_steps, m_trajectories, scheme, base_seed,
                       stride, mu, observables, threads=threads)
    ref = integrate_density(pure_state_density(initial), h, tau, n_steps, "liouville",
                            "exact_unitary_conjugation", mu=mu, stride=stride)
    cov = compare_ensemble_vs_density(acc, ref, observables, n_sigma)
    ratio = acc.sigma_norm() / acc.sigma_norm()[0]
    ratio_se = acc.sigma_norm_stderr() / acc.sigma_norm()[0]
    expected = np.exp(-0.5 * gamma**2 * acc.times)
    return ComparisonReport(["sigma_ratio"] + cov.labels, acc.times.copy(),
                            np.column_stack([ratio, cov.ensemble]),
                            np.column_stack([ratio_se, cov.stderr]),
                            np.column_stack([expected, cov.reference]), n_sigma, cov.atol)


def _fit_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def weak_convergence_study(initial: StateVector, h: OperatorMatrix, noise: NoiseModel,
                           tau_list, m_trajectories: int, horizon: float,
                           observable: BilinearFunctional | None = None,
                           scheme: str = "euler", base_seed: int = 0, mu: float = 1.0,
                           expected_slope: float = 1.0, slope_tolerance: float = 0.3,
                           min_signal: float = 3.0, threads: int = 1) -> ConvergenceReport:
    """Bias of an ensemble average at ``horizon`` versus the time step.

    Without ``observable`` the mean norm is studied (exact value 1).  Otherwise
    the reference is the Lindblad flow integrated with RK4 at the finest step.
    All step sizes must be integer multiples of the finest one; the runs share
    Brownian paths through coupled noise refinement, which keeps the
    comparison between step sizes sharp.  The study is ``inconclusive`` when
    some bias is smaller than ``min_signal`` standard errors.
    """
    taus = np.sort(np.asarray(tau_list, dtype=float))[::-1]
    fine = taus[-1]
    ratios = taus / fine
    substeps = np.rint(ratios).astype(int)
    if np.any(np.abs(ratios - substeps) > 1e-9):
        raise ValueError(f"step sizes {taus} are not integer multiples of {fine}")
    n_fine = int(round(horizon / fine))
    if abs(n_fine * fine - horizon) > 1e-9 * horizon or np.any(n_fine % substeps):
        raise ValueError(f"horizon {horizon} is not a whole number of steps for {taus}")
    tracked = () if observable is None else (observable,)
    if observable is None:
        reference = 1.0
    else:
        ref = integrate_density(pure_state_density(initial), h, fine, n_fine, "lindblad", "rk4",
                                noise, mu, stride=n_fine)
        reference = expectation_from_covariance(observable, ref[-1]).real
    errors, ses = [], []
    for tau, sub in zip(taus, substeps):
        acc = run_ensemble(initial, h, noise, tau, n_fine // sub, m_trajectories, scheme,
                           base_seed, n_fine // sub, mu, tracked, threads=threads,
                           noise_substeps=int(sub))
        if observable is None:
            value, se = acc.mean_norm()[-1], acc.norm_stderr()[-1]
        else:
            value, se = acc.observable_mean(observable.label)[-1], acc.observable_stderr(observable.label)[-1]
        errors.append(value - reference)
        ses.append(se)
    errors, ses = np.array(errors), np.array(ses)
    signal = np.abs(errors) / np.where(ses > 0, ses, np.inf)
    if np.any(signal < min_signal) or np.any(errors == 0):
        slope = _fit_slope(taus, np.abs(errors)) if np.all(errors != 0) else float("nan")
        status = "inconclusive"
    else:
        slope = _fit_slope(taus, np.abs(errors))
        status = "pass" if abs(slope - expected_slope) <= slope_tolerance else "fail"
    return ConvergenceReport("tau", taus, errors, ses, slope, expected_slope, slope_tolerance,
                             status)


# -- closed-form references --------------------------------------------------------------

@dataclass
class OracleSeries:
    kind: str
    times: np.ndarray
    x_mean: np.ndarray
    p_mean: np.ndarray
    x_variance: np.ndarray
    energy: float
    initial: StateVector | None = None


ORACLE_KINDS = ("ground_state", "harmonic_coherent", "free_gaussian")


def analytic_oracles(kind: str, times, grid: Grid | None = None, mass: float = 1.0,
                     omega: float = 1.0, mu: float = 1.0, displacement: float = 2.0,
                     width: float = 1.0, momentum: float = 0.0,
                     containment: float = 6.0) -> OracleSeries:
    """Closed-form moments of the Schrodinger flow for three textbook cases.

    When ``grid`` is given the matching initial state is attached and the
    parameters are checked against it: the packet width and the shortest de
    Broglie wavelength must span at least 4 grid points, and the packet must
    stay ``containment`` standard deviations away from the periodic boundary.
    """
    t = np.asarray(times, dtype=float)
    if kind == "ground_state":
        sd = np.sqrt(mu / (2 * mass * omega))
        x = np.zeros_like(t)
        p = np.zeros_like(t)
        var = np.full_like(t, sd**2)
        energy = 0.5 * mu * omega
        center, p_max, sd_max = 0.0, 0.0, sd
    elif kind == "harmonic_coherent":
        sd = np.sqrt(mu / (2 * mass * omega))
        x = displacement * np.cos(omega * t)
        p = -mass * omega * displacement * np.sin(omega * t)
        var = np.full_like(t, sd**2)
        energy = 0.5 * mu * omega + 0.5 * mass * omega**2 * displacement**2
        center, p_max, sd_max = abs(displacement), mass * omega * abs(displacement), sd
    elif kind == "free_gaussian":
        x = displacement + momentum * t / mass
        p = np.full_like(t, momentum)
        var = width**2 + (mu * t / (2 * mass * width)) ** 2
        energy = momentum**2 / (2 * mass) + mu**2 / (8 * mass * width**2)
        center = float(np.max(np.abs(x))) if t.size else abs(displacement)
        p_max, sd_max = abs(momentum), float(np.sqrt(np.max(var))) if t.size else width
    else:
        raise ValueError(f"unknown oracle kind {kind!r}; choose from {ORACLE_KINDS}")

    initial = None
    if grid is not None:
        dx = grid.spacing
        sd0 = np.sqrt(var[0]) if t.size else sd_max
        if sd0 < 4 * dx:
            raise ValueError(f"packet width {sd0:.3g} spans fewer than 4 grid points (dx={dx:.3g})")
        # spread of the momentum distribution is mu / (2 sd0)
        k_top = (p_max + 3 * mu / (2 * sd0)) / mu
        if k_top > 0 and 2 * np.pi / k_top < 4 * dx:
            raise ValueError(f"wavelength {2 * np.pi / k_top:.3g} spans fewer than 4 grid points")
        if center + containment * sd_max > 0.5 * grid.length:
            raise ValueError(
                f"packet reaches {center + containment * sd_max:.3g}, beyond the half-domain "
                f"{0.5 * grid.length:.3g}; shorten the horizon or enlarge the domain")
        if kind == "ground_state":
            initial = coherent_state(grid, 0.0, mass, omega, mu)
        elif kind == "harmonic_coherent":
            initial = coherent_state(grid, displacement, mass, omega, mu)
        else:
            initial = gaussian_state(grid, displacement, width, momentum, mu)
    return OracleSeries(kind, t, x, p, var, energy, initial)


def oracle_hamiltonian(kind: str, grid: Grid, mass: float = 1.0, omega: float = 1.0,
                       mu: float = 1.0) -> OperatorMatrix:
    potential = None if kind == "free_gaussian" else harmonic_potential(grid, mass, omega)
    return hamiltonian_build(grid, mu, mass, potential)


def random_smooth_noise(h: OperatorMatrix, grid: Grid, gamma: float, n_modes: int = 16,
                        seed: int = 0, xi_distribution: str = "standard_gaussian") -> NoiseModel:
    """Random non-hermitian G supported on the ``n_modes`` lowest eigenmodes of ``h``.

    ``G = gamma * V C V^+`` with ``V`` the (unitary) eigenvectors and ``C`` a
    complex Gaussian matrix scaled to unit spectral norm, so ``|G| = gamma``.
    Keeping G in the resolved low-energy subspace keeps explicit steps stable.
    """
    rng = np.random.default_rng(seed)
    _, vecs = np.linalg.eigh(h.entries)
    v = vecs[:, :n_modes]
    c = rng.standard_normal((n_modes, n_modes)) + 1j * rng.standard_normal((n_modes, n_modes))
    c /= np.linalg.norm(c, 2)
    return make_noise_model(gamma * (v @ c @ v.conj().T), xi_distribution)


# -- quick self-check suite ---------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float


def _check(name: str, value: float, limit: float) -> CheckResult:
    return CheckResult(name, bool(value <= limit), float(value), float(limit))


def default_suite(m_trajectories: int = 2000, base_seed: int = 0,
                  threads: int = 1) -> list[CheckResult]:
    """Reduced versions of the full acceptance experiments, a few seconds each.

    Statistical checks report the worst deviation in standard errors (limit
    3); the others report an absolute error.
    """
    from .density import consistency_check_pure, lindblad_rhs, schrodinger_propagate
    from .functionals import evaluate, norm_functional, poisson_bracket
    from .grid import commutator, make_grid
    from .stochastic import lowering_operator, run_trajectory

    checks = []
    g = make_grid(64, 20.0)
    h = hamiltonian_build(g, 1.0, 1.0, harmonic_potential(g))
    psi = coherent_state(g, 1.0)
    dephasing = dephasing_noise(g.n_points, 0.5)

    rec = run_trajectory(psi, h, dephasing, 1e-3, 10_000, "exact_split", base_seed, stride=100)
    checks.append(_check("trajectory_norm", np.max(np.abs(rec.norms() - 1.0)), 1e-10))

    rho0 = pure_state_density(psi)
    lind = integrate_density(rho0, h, 0.01, 500, "lindblad", "rk4", dephasing)
    liou = integrate_density(rho0, h, 0.01, 500, "liouville", "rk4")
    checks.append(_check("dephasing_reduction", np.max(np.abs(lind.entries - liou.entries)), 1e-12))

    exact = integrate_density(rho0, h, 0.01, 1000, "liouville", "exact_unitary_conjugation",
                              stride=10)
    states = schrodinger_propagate(psi, h, 0.01, 1000, stride=10)
    checks.append(_check("pure_state_equivalence",
                         consistency_check_pure(exact, states).max_deviation, 1e-10))

    g256 = make_grid(256, 20.0)
    t = np.linspace(0.0, 10.0, 21)
    for kind, horizon, quantity, limit in (("ground_state", 10.0, "energy", 1e-6),
                                           ("harmonic_coherent", 10.0, "x_mean", 1e-4),
                                           ("free_gaussian", 2.0, "x_variance", 1e-4)):
        stamps = t[t <= horizon]
        oracle = analytic_oracles(kind, stamps, g256,
                                  displacement=0.0 if kind == "free_gaussian" else 2.0)
        hk = oracle_hamiltonian(kind, g256)
        step = stamps[1] - stamps[0]
        series = schrodinger_propagate(oracle.initial, hk, step, len(stamps) - 1)
        a, x = series.amplitudes, g256.positions
        dens = g256.spacing * np.abs(a) ** 2
        mean = dens @ x
        if quantity == "energy":
            got = g256.spacing * np.sum(a.conj() * (a @ hk.entries.T), axis=1).real
            want = np.full_like(got, oracle.energy)
        elif quantity == "x_mean":
            got, want = mean, oracle.x_mean
        else:
            got, want = dens @ x**2 - mean**2, oracle.x_variance
        checks.append(_check(f"oracle_{kind}", np.max(np.abs(got - want)), limit))

    n_f, h_f = norm_functional(g), BilinearFunctional(h, "H")
    checks.append(_check("bracket_norm_energy",
                         np.max(np.abs(poisson_bracket(n_f, h_f).kernel.entries)), 0.0))
    x_f = BilinearFunctional(position_operator(g), "x")
    p_f = BilinearFunctional(momentum_operator(g), "p")
    xp = poisson_bracket(x_f, p_f)
    checks.append(_check("bracket_xp", abs(evaluate(xp, coherent_state(g, 0.5)) - 1j), 1e-6))
    a_, b_, c_ = (position_operator(g) * (1 / 10), momentum_operator(g) * (1 / 10), h * (1 / 90))
    jacobi = (commutator(commutator(a_, b_), c_) + commutator(commutator(b_, c_), a_)
              + commutator(commutator(c_, a_), b_))
    checks.append(_check("bracket_jacobi", np.max(np.abs(jacobi.entries)), 1e-12))
    lower = make_noise_model(0.5 * lowering_operator(g).entries)
    checks.append(_check("lindblad_trace", abs(lindblad_rhs(rho0, h, lower).trace()), 1e-12))

    decay = mean_decay_experiment(h, 0.5, 0.01, 400, m_trajectories, psi, base_seed=base_seed,
                                  stride=50, threads=threads)
    checks.append(_check("mean_decay", decay.max_normalized_deviation, decay.n_sigma))

    observables = standard_observables(g, h)
    acc = run_ensemble(psi, h, lower, 1e-3, 5000, m_trajectories, "euler", base_seed, 500,
                       observables=observables, threads=threads)
    ref = integrate_density(rho0, h, 1e-3, 5000, "lindblad", "rk4", lower, stride=500)
    cov = compare_ensemble_vs_density(acc, ref, observables)
    checks.append(_check("covariance_lindblad", cov.max_normalized_deviation, cov.n_sigma))

    small = dict(initial=psi, h=h, noise=lower, tau=1e-3, n_steps=200, m_trajectories=64,
                 scheme="euler", base_seed=base_seed, stride=50, observables=observables,
                 chunk_size=16)
    serial, parallel = run_ensemble(**small, threads=1), run_ensemble(**small, threads=2)
    gap = max(np.max(np.abs(serial.sum_outer - parallel.sum_outer)),
              np.max(np.abs(serial.mean_norm() - parallel.mean_norm())))
    checks.append(_check("serial_parallel_agreement", gap, 1e-12))
    return checks
