"""Conditional-information weighting for calibration with spatially dependent residuals."""

from .calibration import CalibrationConfig, CalibrationResult, ToyPlume, ExternalModel, calibrate_iterative
from .ci_weights import WeightVector, compute_weights
from .cost import estimate_mean, mse, spatial_ml_mean, wmse
from .experiments import ExperimentScenario, SummaryStats, load_scenario, run_scenario, summarize
from .gp_sim import SamplingScheme, sample_locations, simulate_gp
from .spatial_core import ObservationSet, load_observations
from .variogram import VariogramModel, empirical_variogram, fit

__version__ = "0.1.0"
