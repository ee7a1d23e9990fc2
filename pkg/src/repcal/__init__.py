"""Reciprocity calibration of dual-antenna repeaters."""

from .errors import ConfigError, DegenerateInputError
from .model import (
    MeasurementSet,
    MultiScenario,
    PreprocessedSet,
    Scenario,
    ScenarioConfig,
    calibration_residual,
    generate_multi_scenario,
    generate_scenario,
    measure_bidirectional,
    preprocess,
    take_calibration_measurements,
    take_onoff_measurements,
)
from .estimators import (
    Estimate,
    SolverOptions,
    alternating_nls,
    alternating_projection_ab,
    basic_nls,
    estimate_gamma_closed_form,
    ingenuous_estimate,
    nls_objective,
    onoff_estimate,
    precalibrated_estimate,
    rank_one_approx,
    update_h_kron,
    update_z,
)

__version__ = "0.1.0"
