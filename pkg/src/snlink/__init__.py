"""Interference prediction and link adaptation for industrial sub-networks.

Sparse Student-t process regression learns per-agent interference dynamics
and CQI measurement models from a calibration trace; a modified unscented
Kalman filter with delay compensation tracks interference online, and the
link adapter picks the largest MCS whose BLER at a posterior SINR quantile
meets the target.
"""
from ._backend import BACKEND
from .errors import ConfigurationError, ContractViolation, NumericalError, SnlinkError
from .feedback import CqiReport, CqiTable, FeedbackChannel, dequantize_cqi, quantize_cqi, sinr_to_esnr
from .harness import ExperimentConfig, ResultTable, constraint_violations, prepare, run_experiment, run_online
from .link_adaptation import DEFAULT_MCS, NONE, McsDecision, McsTable, bler, genie_select, select_mcs
from .mukf import (DelayBuffer, DelayCompensatedTracker, FilterState, UtParams, mukf_predict, mukf_update,
                   sigma_points, sptpr_mukf_step)
from .scenario import ScenarioConfig, advance, init_scenario, sample_cycle
from .sptpr import SptprModel, StudentTPosterior, TrainingSet, VdssmModel, build_vdssm_models, fit_sptpr

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigurationError", "ContractViolation", "NumericalError", "SnlinkError",
    "CqiReport", "CqiTable", "FeedbackChannel", "dequantize_cqi", "quantize_cqi", "sinr_to_esnr",
    "ExperimentConfig", "ResultTable", "constraint_violations", "prepare", "run_experiment", "run_online",
    "DEFAULT_MCS", "NONE", "McsDecision", "McsTable", "bler", "genie_select", "select_mcs",
    "DelayBuffer", "DelayCompensatedTracker", "FilterState", "UtParams", "mukf_predict", "mukf_update",
    "sigma_points", "sptpr_mukf_step",
    "ScenarioConfig", "advance", "init_scenario", "sample_cycle",
    "SptprModel", "StudentTPosterior", "TrainingSet", "VdssmModel", "build_vdssm_models", "fit_sptpr",
]
