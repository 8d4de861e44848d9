"""Minimax random designs for weighted least squares estimation of best linear approximations."""

from .basis import (
    BasisContext,
    MeanFunction,
    best_linear_coefficients,
    best_linear_coefficients_under_design,
    build_basis_context,
    calibrate_leading_coefficient,
    deviation_norm,
    evaluate_h,
    monomial_context,
)
from .design import (
    DesignDensity,
    LevelSetPartition,
    build_design,
    cdf_at,
    density_at,
    f_value,
    level_partition,
    quantile,
    sigma2_min,
    sigma2_min_closed_form,
    solve_threshold,
    table_design,
)
from .risk import RiskReport, minimax_criterion, omega_trace, worst_case_risk
from .rng import RngStream, SampleBatch, coupled_predictors, sample_predictors, simulate_responses
from .simulation import SimConfig, SimResult, convergence_study, event_frequency, run_experiment
from .wls import Dataset, WlsFit, fit_ols, fit_wls, integrated_squared_error, smallest_eigenvalue

__version__ = "0.1.0"
