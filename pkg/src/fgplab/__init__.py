"""Functionally generated portfolios: simulation, master-equation
verification, immunization and variance-capture statistical arbitrage."""

__version__ = "0.1.0"

from .exceptions import (BankruptcyError, DegenerateNumeraireError, DomainWarning, EstimationError, EvaluationError,
                         FGPLabError, FitError, NumericalError, RankError, UnboundedGrowthWarning, ValidationError)
from .fgp import (AuxiliaryProcess, FunctionallyGeneratedPortfolio, MasterEquationReport, discrete_excess_growth,
                  fgp_weights, hitting_switch, lemma_residuals, master_equation, resolve_numeraire, variance_capture)
from .generating import (DiversityGF, FunctionGF, GaugedGF, GeneratingFunction, LinearGF, PassiveGF, QuadraticGF,
                         SwitchingGF, check_translation_equivariance, gauge_transform)
from .immunize import (BetaFactors, ImmunizedGF, capm_beta_factor, capm_beta_instantaneous, capm_beta_series,
                       immunization_residual, immunized_gf, load_factors_csv, orthonormalize, price_level_factor,
                       project_orthogonal)
from .market import (MarketSpec, PathSet, TimeGrid, covariance, load_price_csv, realized_covariation,
                     relative_covariance, simulate_paths, to_numeraire)
from .portfolio import (PassivePortfolio, WeightProcess, excess_growth_rate, numeraire_invariance_residual, q_mirror,
                        wealth_from_weights)
from .statarb import (LongShortInputs, LongShortReport, VariogramFit, VariogramModel, expected_log_with_drift,
                      fit_variogram, growth_rate, long_short_analyze, long_short_from_paths, optimal_c,
                      optimal_horizon, v_of_T)
from .verify import ConvergenceReport, convergence_study, mirror_checks, mirror_decay_mc, scenario_compare
