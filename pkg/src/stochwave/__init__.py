"""Stochastic-field simulation of the covariance hierarchy behind the
Schrodinger equation: noisy norm-preserving flows of a complex field, their
ensemble statistics, and the Lindblad / Liouville / Schrodinger flows they
reproduce."""

from .density import (DensityMatrix, DensitySeries, Propagator, StateSeries,
                      consistency_check_pure, integrate_density, lindblad_rhs, liouville_rhs,
                      pure_state_density, purity, schrodinger_propagate)
from .errors import (ConfigError, DimensionMismatchError, GridMismatchError, NotNormalizedError,
                     NumericalInstabilityError)
from .functionals import (BilinearFunctional, CanonicalPair, evaluate,
                          expectation_from_covariance, norm_functional, phi_from_qp,
                          poisson_bracket, qp_from_phi)
from .grid import (Grid, OperatorMatrix, StateVector, commutator, hamiltonian_build,
                   inner_product, make_grid, momentum_operator, position_operator)
from .stochastic import (EnsembleAccumulator, NoiseModel, TrajectoryState, estimate_covariance,
                         make_noise_model, run_ensemble, run_trajectory, step_euler,
                         step_exact_split)
from .validation import (ComparisonReport, ConvergenceReport, analytic_oracles,
                         compare_ensemble_vs_density, default_suite, mean_decay_experiment,
                         weak_convergence_study)

__version__ = "0.1.0"
