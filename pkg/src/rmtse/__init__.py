"""Two-stage power-system state estimation: random-matrix cleaning of a
measurement window followed by weighted least squares."""

from .estimator import StateEstimate, UnobservableError, WlsConfig, error_decomposition, rwls_estimate, state_mae, wls_estimate
from .grid import GridCase, build_admittance, load_case, parse_case, serialize_case, shipped_cases
from .harness import ExperimentConfig, ExperimentReport, NoiseConfig, emit_report, load_config, mae, run_experiment
from .noise import (
    MeasurementWindow,
    NoiseSpec,
    build_window,
    draw_bias,
    load_window,
    sample_noise,
    save_window,
    sigma_from_truth,
)
from .powerflow import MeasurementPlan, OperatingState, full_scada_plan, measurement_function, measurement_jacobian, solve_power_flow
from .rmt import (
    CleaningRefused,
    clean_eigenvalues,
    clean_matrix,
    clean_window,
    dilation_spectrum,
    mp_edges,
    spectrum_diagnostics,
)

__version__ = "0.1.0"

__all__ = [
    "CleaningRefused",
    "ExperimentConfig",
    "ExperimentReport",
    "GridCase",
    "MeasurementPlan",
    "MeasurementWindow",
    "NoiseConfig",
    "NoiseSpec",
    "OperatingState",
    "StateEstimate",
    "UnobservableError",
    "WlsConfig",
    "build_admittance",
    "build_window",
    "clean_eigenvalues",
    "clean_matrix",
    "clean_window",
    "dilation_spectrum",
    "draw_bias",
    "emit_report",
    "error_decomposition",
    "full_scada_plan",
    "load_case",
    "load_config",
    "load_window",
    "mae",
    "measurement_function",
    "measurement_jacobian",
    "mp_edges",
    "parse_case",
    "run_experiment",
    "rwls_estimate",
    "sample_noise",
    "save_window",
    "serialize_case",
    "shipped_cases",
    "sigma_from_truth",
    "solve_power_flow",
    "spectrum_diagnostics",
    "state_mae",
    "wls_estimate",
]
