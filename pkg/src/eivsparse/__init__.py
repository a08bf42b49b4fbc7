"""Sparse regression with errors in the design: conic and compensated MU
estimators, sensitivity constants, minimax instances and a Monte Carlo harness."""

from .errors import (ConfigError, DimensionError, EivError, EnumerationBudgetError,
                     InfeasibleError, NoFixedPointError, SolverError, UnboundedError)
from .estimators import (FitResult, fit, fit_compensated_mu, fit_conic, fit_dantzig,
                         fit_mu_selector, fixed_point_oracle)
from .model import (Compensation, Dataset, EstimatorConfig, MissingDataSample, TrueModel,
                    TuningConstants, generate_dgp, missing_data_rescale, practical_tuning,
                    theoretical_tuning)
from .solver import (LinearProgram, SecondOrderConeProgram, SolverResult, certify, solve_lp,
                     solve_socp)

__version__ = "0.1.0"
