"""Traffic flow forecasting on station graphs.

Builds adaptive adjacency matrices from stochastic travel times, weather
correlations, and data-availability weights; trains a graph-attention
LSTM forecaster with hand-written gradients; wraps predictions in
adaptive conformal intervals; and ships historical-average plus
link-queue physics baselines for comparison.
"""

__version__ = "0.1.0"

from .adjacency import AdaptiveAdjacency, build_adjacencies, gaussian_kernel
from .baselines import (HistoricalAverage, TurningRatioTable, ltm_predict,
                        saf_predict, saf_step, turning_ratios)
from .config import RunConfig, ScenarioConfig, TrainConfig, load_run_config
from .conformal import (CalibrationSet, ConformalCalibrator, IntervalForecast,
                        build_intervals, calibrate, conformal_quantile)
from .errors import ConfigError, DataError, FlowcastError, TrainingError
from .graph import TrafficGraph, availability_matrix, build_graph, filter_stations
from .ingest import Dataset, FlowNormalizer, load_dataset, normalize_flows
from .metrics import MetricReport, mae, mpiw, picp, rmse, scenario_table
from .nn import ForecastModel
from .scenarios import prepare, run_all, run_scenario
from .stochastic import ks_test, lognormal_draws, sample_travel_times
from .training import (GraphFlowForecaster, load_checkpoint, save_checkpoint,
                       train_model)
from .weather import fit_weather_weights, idw_interpolate

__all__ = [
    "AdaptiveAdjacency", "CalibrationSet", "ConfigError", "ConformalCalibrator",
    "DataError", "Dataset", "FlowNormalizer", "FlowcastError", "ForecastModel",
    "GraphFlowForecaster", "HistoricalAverage", "IntervalForecast",
    "MetricReport", "RunConfig", "ScenarioConfig", "TrafficGraph",
    "TrainConfig", "TrainingError", "TurningRatioTable", "availability_matrix",
    "build_adjacencies", "build_graph", "build_intervals", "calibrate",
    "conformal_quantile", "filter_stations", "fit_weather_weights",
    "gaussian_kernel", "idw_interpolate", "ks_test", "load_checkpoint",
    "load_dataset", "load_run_config", "lognormal_draws", "ltm_predict", "mae",
    "mpiw", "normalize_flows", "picp", "prepare", "rmse", "run_all",
    "run_scenario", "saf_predict", "saf_step", "sample_travel_times",
    "save_checkpoint", "scenario_table", "train_model", "turning_ratios",
]
