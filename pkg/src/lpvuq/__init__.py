"""Self-scheduled LPV state-space surrogates with Bayesian uncertainty.

Identify x+ = A(rho) x + B(rho) u, y = C(rho) x + D(rho) u with
rho = eta(x, u) from input/output data: MAP estimation (multi-start
ADAM -> L-BFGS), a Laplace approximation of the parameter posterior,
and Gaussian predictive distributions splitting aleatoric and epistemic
uncertainty.  Includes a nonlinear mass-spring-damper benchmark.
"""

__version__ = "0.1.0"

from .benchmark import (BenchmarkConfig, MsdGrid, SignalSpec, add_noise_snr, chirp,
                        eval_signal, generate_benchmark_datasets, make_test_input,
                        make_training_input, msd_dynamics, multisine, rk4_step,
                        simulate_grid)
from .data import (Dataset, NormRecord, apply_record, bfr, denormalize, normalize,
                   read_dataset, write_dataset)
from .estimate import (FitConfig, FitResult, MapObjective, ModelDims, Prior,
                       adam_minimize, build_prior, cost_gradient, dims_from_model,
                       fit_lti_prior, flat_prior, lbfgs_minimize, multi_start_fit,
                       neg_log_posterior)
from .exceptions import (DataFormatError, DimensionMismatchError, DivergenceError,
                         FitDivergedError, LpvuqError, NonFiniteActivationError,
                         SingularUpdateError)
from .model import (LoadedModel, LpvSsModel, ParamLayout, SchedulingNet,
                    assemble_matrices, eval_scheduling, load_model, pack_params,
                    save_model, simulate, step, unpack_params)
from .sensitivity import (SensitivityState, scheduling_jacobians, sensitivity_step,
                          simulate_with_sensitivities)
from .uq import (PosteriorApprox, PredictiveTrajectory, chi2_cdf, chi2_inv_cdf,
                 confidence_region_test, gauss_newton_hessian, gaussian_marginal,
                 laplace_fit, load_posterior, predictive_trajectory,
                 read_trajectory_csv, save_posterior, woodbury_posterior_covariance,
                 write_trajectory_csv)
