"""Robust factor-profiled variable screening for ultra-high-dimensional
regression: robust scale estimators, reweighted MCD, a trimmed-squares latent
factor fit, MM-regression screening, BIC-family model selection, and a
benchmark simulation harness."""

from .exceptions import ConvergenceError, DegenerateDataError, RankDeficientError
from .robust_stats import (RobustScale, ScaleEstimator, bisquare_psi,
                           bisquare_rho, bisquare_weight, chi2_quantile,
                           median, mscale, normal_quantile, qn_scale)
from .mcd import McdFit, fit_mcd
from .regression import (RegressionFit, m_step, mm_estimator, ols, s_estimator,
                         standardized_residuals)
from .factor_model import (FactorFit, LtsState, ObsFlag, fit_factor_model,
                           fit_lts_subspace, select_dimension, select_lambda,
                           svd_preproject, transform_yeo_johnson)
from .screening import (Method, OutlierReport, RowLabel, SolutionPath,
                        fpsis_path, profile_response, rfpsis_path, sis_path)
from .model_selection import (Criterion, CriterionValue, refit_path,
                              select_model, wrss)
from .simulation import (LeverageKind, SimulatedDataset, SimulationReport,
                         SimulationSpec, TrueLabel, generate,
                         minimal_model_size, run_experiment)

__version__ = "0.1.0"
