"""ebmlab: exact and stochastic study of energy-based models trained
with non-convergent MCMC.

The package pairs an exact master-equation lane (enumerated state
spaces, spectral evolution, exact finite-time gradients) with a
stochastic lane (heat-bath chain ensembles, Langevin integrators) so
that every sampled quantity has a deterministic oracle.
"""

from .numerics import (Eigensystem, OdeTrajectory, RngStream, BracketError,
                       sym_eig, integrate_ode, find_root, rng_stream)
from .moments import MomentEstimate, moments_from_samples, pair_indices
from .master_equation import (CapacityError, DetailedBalanceError, SpinStateSpace,
                              EnergyTable, GibbsDistribution, TransitionOperator,
                              SpectralExpansion, TrainingReport, HessianReport,
                              gibbs_distribution, build_discrete_heatbath,
                              build_continuous_glauber, spectral_expansion, evolve,
                              evolve_direct, lambda_correction, mixing_time,
                              finite_k_moment, mismatch_D, pair_field_observables,
                              moments_of_distribution, exact_finite_k_gradient,
                              train_exact, hessian_check, moment_error_curve,
                              error_zero_crossings, uniform_distribution,
                              delta_distribution)
from .gaussian import (ThresholdError, ModeState, RotationState, langevin_moment,
                       simulate_langevin_mc, eigen_flow_rhs, fixed_point,
                       divergence_threshold, relaxation_time, fit_relaxation_time,
                       integrate_eigen_flow, rotation_flow_rhs, integrate_rotation_flow,
                       projected_covariance, rotation_rate, resampling_error)
from .boltzmann import (BoltzmannModel, ChainEnsemble, heatbath_step, make_ensemble,
                        sample_k, moment_trajectory, train, mf_correlation_k,
                        correlation_error, coupling_error)
from .datasets import (SpinDataset, lattice_couplings, generate_ising2d,
                       generate_gaussian, data_moments, save_spin_dataset,
                       load_spin_dataset, save_model, load_model)

__version__ = "0.1.0"
