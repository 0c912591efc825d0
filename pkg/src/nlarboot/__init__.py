"""Multi-step prediction inference for parametric non-linear autoregressions.

Simulation and forward-bootstrap optimal point predictors under L1/L2 loss,
quantile prediction intervals, pertinent prediction intervals via the
forward double-bootstrap (with fitted or predictive residuals), and a
replicated experiment harness.
"""

from .errors import (ConfigError, DegenerateSeriesError, DomainViolation,
                     ExplosionError, FitFailure, NlarError)
from .fitting import (FitOptions, FitResult, ResidualSet, center,
                      default_smoothing_variance, ecdf_sup_distance, fit_mean,
                      fit_model, fit_variance, fitted_residuals, normalize,
                      predictive_residuals, prepare_innovation_residuals,
                      smooth)
from .harness import (ALL_METHODS, ExperimentConfig, MetricsRow, MetricsTable,
                      export_table, load_table, naive_predict,
                      run_and_export, run_coverage_experiment,
                      run_experiment, run_point_experiment)
from .intervals import (BootstrapReplicate, PertinentInterval,
                        generate_pseudo_series, inner_predict, ppi, ppi_engine)
from .models import (Box, DriftReport, InnovationDistribution, ModelSpec,
                     ParameterVector, TimeSeries, builtin_model, eval_mean,
                     eval_variance, log_abs_spec, log_exp_sum_spec,
                     log_square_spec, polynomial_spec, probe_drift_condition,
                     simulate_continuation, simulate_path,
                     threshold_linear_spec)
from .modelconfig import load_model_config, resolve_model
from .prediction import (PointPrediction, PredictiveEnsemble, QuantileInterval,
                         bootstrap_predict, oracle_predict, point_predict, qpi,
                         simulate_future)

__version__ = "0.1.0"

__all__ = [
    "ALL_METHODS", "BootstrapReplicate", "Box", "ConfigError",
    "DegenerateSeriesError", "DomainViolation", "DriftReport",
    "ExperimentConfig", "ExplosionError", "FitFailure", "FitOptions",
    "FitResult", "InnovationDistribution", "MetricsRow", "MetricsTable",
    "ModelSpec", "NlarError", "ParameterVector", "PertinentInterval",
    "PointPrediction", "PredictiveEnsemble", "QuantileInterval",
    "ResidualSet", "TimeSeries", "bootstrap_predict", "builtin_model",
    "center", "default_smoothing_variance", "ecdf_sup_distance", "eval_mean", "eval_variance",
    "export_table", "fit_mean", "fit_model", "fit_variance",
    "fitted_residuals", "generate_pseudo_series", "inner_predict",
    "load_model_config", "load_table", "log_abs_spec", "log_exp_sum_spec",
    "log_square_spec", "naive_predict", "normalize", "oracle_predict",
    "point_predict", "polynomial_spec", "ppi", "ppi_engine",
    "predictive_residuals", "prepare_innovation_residuals",
    "probe_drift_condition", "qpi", "resolve_model", "run_and_export",
    "run_coverage_experiment", "run_experiment", "run_point_experiment",
    "simulate_continuation", "simulate_future", "simulate_path", "smooth",
    "threshold_linear_spec",
]
