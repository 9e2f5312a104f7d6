"""Dual control of false negatives and false positives in high-dimensional selection."""

from .baselines import MetricRow, bh_fdr_select, evaluate, fm_index
from .depmodels import (
    Autoregressive,
    Block,
    Explicit,
    Factor,
    Identity,
    RandomBlock,
    build_covariance,
    dependence_summary,
    phase_boundary,
    theory_boundaries,
)
from .fnpcontrol import SelectionReport, dcoe_select, dcoe_select_estimated, fnp_hat, fnp_true
from .numcore import RngStream, cholesky, mvn_sample, normal_quantile, normal_sf
from .proportion import NullCalibration, ProportionEstimate, calibrate, estimate_pi
from .simharness import ExperimentSpec, GridSpec, consistency_curve, run_experiment, run_grid
from .statvector import StatVector

__version__ = "0.1.0"

__all__ = [
    "Autoregressive", "Block", "Explicit", "ExperimentSpec", "Factor", "GridSpec", "Identity", "MetricRow",
    "NullCalibration", "ProportionEstimate", "RandomBlock", "RngStream", "SelectionReport", "StatVector",
    "bh_fdr_select", "build_covariance", "calibrate", "cholesky", "consistency_curve", "dcoe_select",
    "dcoe_select_estimated", "dependence_summary", "estimate_pi", "evaluate", "fm_index", "fnp_hat", "fnp_true",
    "mvn_sample", "normal_quantile", "normal_sf", "phase_boundary", "run_experiment", "run_grid",
    "theory_boundaries",
]
