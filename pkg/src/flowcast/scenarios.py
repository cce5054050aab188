"""End-to-end scenario sweep: sample, fuse weather, train, calibrate, score.

One prepared dataset is shared across coefficient-of-variation levels;
each level gets its own sampled travel times, adjacency, trained model,
conformal calibration, metrics, and artifact files. Baselines run on the
same test windows and the same normalized scale as the model.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .adjacency import build_adjacencies
from .baselines import (HistoricalAverage, capacities_from_training, ltm_predict,
                        saf_predict, turning_ratios)
from .config import RunConfig, TrainConfig
from .conformal import build_intervals, calibrate, epoch_quantiles, split_cp
from .errors import DataError, FlowcastError
from .graph import (AvailabilityMatrix, TrafficGraph, availability_matrix,
                    build_graph, filter_stations)
from .ingest import (TRAVEL_TIME_FLOOR_MINUTES, Dataset, FlowNormalizer,
                     NormalizationParams, load_dataset, normalize_flows)
from .metrics import score_intervals, score_points
from .nn import ForecastModel
from .stochastic import sample_travel_times
from .training import (WeatherScaler, WindowSet, assemble_windows,
                       predict_batches, save_checkpoint, split_counts,
                       train_model, training_boundary, usable_target_steps)
from .weather import (adjust_travel_times, aligned_travel_series,
                      edge_correlations, fit_weather_weights,
                      interpolate_stations, weather_features)

log = logging.getLogger("flowcast")

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"


@dataclass
class Prepared:
    """Scenario-independent state shared by every CV level."""

    dataset: Dataset
    graph: TrafficGraph
    availability: AvailabilityMatrix
    station_ids: list[str]
    weather_series: dict
    values: np.ndarray            # raw flows, filtered stations (T, n)
    valid: np.ndarray
    timestamps: pd.DatetimeIndex
    target_steps: np.ndarray
    boundary: int
    flows_norm: np.ndarray
    norm_params: NormalizationParams
    weather_scaler: WeatherScaler
    windows: WindowSet
    train_config: TrainConfig

    @property
    def n(self) -> int:
        return len(self.station_ids)


def prepare(config: RunConfig) -> Prepared:
    """Load, filter, interpolate, normalize, and window the dataset."""
    t0 = time.perf_counter()
    dataset = load_dataset(config.data_dir)
    graph = filter_stations(build_graph(dataset.stations, dataset.travel_time),
                            config.min_availability)
    avail = availability_matrix(graph)
    station_ids = [s.station_id for s in graph.nodes]
    column = {sid: i for i, sid in enumerate(dataset.flows.station_ids)}
    cols = [column[sid] for sid in station_ids]
    values = dataset.flows.values[:, cols]
    valid = dataset.flows.valid[:, cols]

    tc = config.train_config()
    target_steps = usable_target_steps(valid, tc.look_back, tc.horizon)
    if len(target_steps) == 0:
        raise DataError("no usable training windows; series too short or too gappy")
    train_count, val_count = split_counts(len(target_steps), tc.train_frac, tc.val_frac)
    boundary = training_boundary(target_steps, train_count, tc.horizon)
    flows_norm, norm_params = normalize_flows(values, boundary, station_ids)

    weather_series = interpolate_stations(graph.nodes, dataset.sensors, dataset.weather)
    feats = weather_features(weather_series, station_ids, dataset.flows.timestamps)
    scaler = WeatherScaler().fit(feats, boundary)
    windows = assemble_windows(flows_norm, scaler.transform(feats),
                               target_steps, tc.look_back, tc.horizon,
                               train_count, val_count)
    log.info("prepared %d stations, %d steps, %d windows (%.1fs)",
             len(station_ids), len(values), len(windows), time.perf_counter() - t0)
    return Prepared(dataset, graph, avail, station_ids, weather_series, values,
                    valid, dataset.flows.timestamps, target_steps, boundary,
                    flows_norm, norm_params, scaler, windows, tc)


# -- adjacency for one scenario -----------------------------------------------


def scenario_adjacency(prepared: Prepared, config: RunConfig, cv: float,
                       mode: str | None = None):
    """Sampled, weather-adjusted, availability-merged adjacency for one CV."""
    scenario = config.scenario(cv)
    matrix = prepared.graph.travel_time
    samples = sample_travel_times(matrix, scenario)
    n = prepared.n
    length = min(len(s.timestamps) for s in prepared.weather_series.values())
    correlations = {}
    rows = []
    for i, j in np.argwhere(matrix.present_mask()):
        series = aligned_travel_series(float(matrix.minutes[i, j]), cv,
                                       config.seed, int(i) * n + int(j), length)
        corr = edge_correlations(
            series, prepared.weather_series[prepared.station_ids[i]],
            prepared.weather_series[prepared.station_ids[j]])
        correlations[(int(i), int(j))] = corr
        rows.append((corr, float(samples[:, i, j].mean())))
    weights = fit_weather_weights(rows)
    adjusted = adjust_travel_times(samples, matrix, correlations, weights,
                                   TRAVEL_TIME_FLOOR_MINUTES)
    adjacency = build_adjacencies(adjusted, prepared.availability,
                                  prepared.station_ids, scenario,
                                  mode or config.aggregation)
    return adjacency, weights


# -- baselines -----------------------------------------------------------------


def _lagged_demand(values: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Observed flows shifted one step back over [start, stop)."""
    return values[start - 1:stop - 1]


def baseline_predictions(prepared: Prepared) -> dict[str, np.ndarray]:
    """HA/SAF/LTM forecasts on the test windows, normalized scale.

    The simulators run over the contiguous step range covering the test
    targets (after a look-back-long warm-up), driven by observed flows
    lagged one step so no method sees the step it predicts.
    """
    tc = prepared.train_config
    windows = prepared.windows
    test_targets = prepared.target_steps[windows.test_slice]
    horizon = tc.horizon
    boundary = prepared.boundary

    ha = HistoricalAverage().fit(prepared.timestamps[:boundary],
                                 prepared.values[:boundary],
                                 prepared.valid[:boundary])
    train_valid = prepared.valid[:boundary]
    capacities = capacities_from_training(prepared.values[:boundary], train_valid)
    ratios = turning_ratios(prepared.graph.travel_time.minutes)

    sim_start = max(1, int(test_targets[0]) - tc.look_back)
    sim_stop = int(test_targets[-1]) + horizon
    demand = _lagged_demand(prepared.values, sim_start, sim_stop)
    saf_rows, _state = saf_predict(demand, ratios, capacities)
    ltm_rows = ltm_predict(demand, prepared.graph.travel_time.minutes,
                           ratios, capacities)

    norm = FlowNormalizer.from_params(prepared.norm_params)
    n_test = len(test_targets)
    n = prepared.n
    out = {}
    for name, source in (("saf", saf_rows), ("ltm", ltm_rows)):
        pred = np.empty((n_test, n, horizon))
        for w, t in enumerate(test_targets):
            for k in range(horizon):
                pred[w, :, k] = norm.transform(source[t + k - sim_start][None])[0]
        out[name] = pred
    ha_pred = np.empty((n_test, n, horizon))
    for k in range(horizon):
        stamps = prepared.timestamps[test_targets + k]
        ha_pred[:, :, k] = norm.transform(ha.predict(stamps))
    out["ha"] = ha_pred
    return out


# -- one full scenario -----------------------------------------------------------


def _denormalize(norm: FlowNormalizer, array: np.ndarray) -> np.ndarray:
    """Invert per-station scaling on (windows, stations, horizon) blocks."""
    flat = array.transpose(0, 2, 1).reshape(-1, array.shape[1])
    back = norm.inverse_transform(flat)
    return back.reshape(array.shape[0], array.shape[2], array.shape[1]).transpose(0, 2, 1)


def _write_predictions(path: Path, prepared: Prepared, points, lower, upper) -> None:
    """Vehicle-unit CSV: one row per window target, station, horizon step."""
    windows = prepared.windows
    test_targets = prepared.target_steps[windows.test_slice]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "timestamp", "point", "lower", "upper"])
        for w, t in enumerate(test_targets):
            for s, sid in enumerate(prepared.station_ids):
                for k in range(windows.horizon):
                    stamp = prepared.timestamps[t + k].strftime(TIMESTAMP_FORMAT)
                    writer.writerow([sid, stamp, repr(float(points[w, s, k])),
                                     repr(float(lower[w, s, k])),
                                     repr(float(upper[w, s, k]))])


def run_scenario(prepared: Prepared, config: RunConfig, cv: float,
                 scenario_dir: Path) -> dict:
    """Train and score one CV level; writes artifacts, returns metrics."""
    t0 = time.perf_counter()
    scenario_dir.mkdir(parents=True, exist_ok=True)
    tc = prepared.train_config
    windows = prepared.windows

    adjacency, weights = scenario_adjacency(prepared, config, cv, mode="mean")
    adjacency.write_csv(scenario_dir / "adjacency.csv")

    model = ForecastModel(adjacency.values, windows.features.shape[-1], tc,
                          rng=np.random.default_rng(config.seed))
    result = train_model(model, windows, tc, seed=config.seed)
    log.info("cv=%g trained %d epochs (best %d) in %.1fs", cv, len(result.stats),
             result.best_epoch, time.perf_counter() - t0)

    save_checkpoint(scenario_dir / "checkpoint.bin", model.params, tc,
                    prepared.norm_params, adjacency.values, prepared.station_ids,
                    meta={"cv": cv, "alpha": config.alpha, "seed": config.seed,
                          "samples": config.samples,
                          "weather_scaler": prepared.weather_scaler.to_dict()})

    acp = calibrate(result.final_residuals, config.alpha)
    quantiles = epoch_quantiles(result.residual_history, config.alpha)
    with open(scenario_dir / "calibration.json", "w") as fh:
        json.dump({"alpha": config.alpha, "quantile": acp.quantile,
                   "best_epoch": result.best_epoch,
                   "epoch_quantiles": quantiles,
                   "residuals": [float(r) for r in acp.residuals]},
                  fh, sort_keys=True, indent=1)

    test_x = windows.features[windows.test_slice]
    test_y = windows.targets[windows.test_slice]
    points = predict_batches(model, test_x, tc.batch_size)
    intervals = build_intervals(points, acp)
    split = split_cp(lambda f: predict_batches(model, f, tc.batch_size),
                     windows.features[windows.val_slice],
                     windows.targets[windows.val_slice], config.alpha)
    split_intervals = build_intervals(points, split)

    methods = {
        "model": score_intervals(test_y, points, intervals.lower, intervals.upper),
        "model_split_cp": score_intervals(test_y, points, split_intervals.lower,
                                          split_intervals.upper),
    }
    for name, pred in sorted(baseline_predictions(prepared).items()):
        methods[name] = score_points(test_y, pred)

    metrics = {
        "cv": cv,
        "alpha": config.alpha,
        "samples": config.samples,
        "seed": config.seed,
        "counts": {"windows": len(windows), "train": windows.train_count,
                   "val": windows.val_count, "test": windows.test_count},
        "weather_weights": {"temp": weights.alpha_temp, "wind": weights.alpha_wind,
                            "precip": weights.alpha_precip,
                            "fallback": weights.fallback},
        "methods": {k: v.to_dict() for k, v in methods.items()},
        "training": {
            "epochs": len(result.stats),
            "best_epoch": result.best_epoch,
            "stopped_early": result.stopped_early,
            "diverged": result.diverged,
            "train_loss": [s.train_loss for s in result.stats],
            "val_loss": [s.val_loss for s in result.stats],
            "epoch_quantiles": quantiles,
        },
    }

    norm = FlowNormalizer.from_params(prepared.norm_params)
    raw_points = _denormalize(norm, points)
    raw_lower = _denormalize(norm, intervals.lower)
    raw_upper = _denormalize(norm, intervals.upper)
    if config.denormalized:
        raw_truth = _denormalize(norm, test_y)
        metrics["denormalized"] = {
            "model": score_intervals(raw_truth, raw_points, raw_lower,
                                     raw_upper).to_dict(),
        }
    _write_predictions(scenario_dir / "predictions.csv", prepared,
                       raw_points, raw_lower, raw_upper)

    with open(scenario_dir / "metrics.json", "w") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=1)
    log.info("cv=%g scenario complete in %.1fs", cv, time.perf_counter() - t0)
    return metrics


SCENARIO_FILES = ("adjacency.csv", "checkpoint.bin", "calibration.json",
                  "predictions.csv", "metrics.json")


def scenario_dir_name(cv: float) -> str:
    return f"scenario_cv{cv:g}"


def _run_one(prepared: Prepared, config: RunConfig, cv: float,
             out_dir: str) -> tuple[float, str | None]:
    """Worker body: returns (cv, error text or None)."""
    scen_dir = Path(out_dir) / scenario_dir_name(cv)
    try:
        run_scenario(prepared, config, cv, scen_dir)
        return cv, None
    except FlowcastError as exc:
        scen_dir.mkdir(parents=True, exist_ok=True)
        (scen_dir / ".failed").write_text(f"{type(exc).__name__}: {exc}\n")
        return cv, f"{type(exc).__name__}: {exc}"


def run_all(config: RunConfig, parallel: int = 1) -> tuple[dict, int]:
    """Sweep every CV level; write the manifest; return (manifest, exit code)."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prepared = prepare(config)
    jobs = [(cv, str(out_dir)) for cv in config.cv_levels]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(_run_one, [prepared] * len(jobs),
                                     [config] * len(jobs),
                                     [cv for cv, _ in jobs],
                                     [d for _, d in jobs]))
    else:
        outcomes = [_run_one(prepared, config, cv, d) for cv, d in jobs]

    scenarios = []
    failures = []
    for cv, error in outcomes:
        name = scenario_dir_name(cv)
        if error is None:
            files = [f"{name}/{f}" for f in SCENARIO_FILES]
            scenarios.append({"cv": cv, "status": "ok", "files": files})
        else:
            scenarios.append({"cv": cv, "status": "failed", "error": error,
                              "files": [f"{name}/.failed"]})
            failures.append(error)
    manifest = {
        "config": config.to_dict(),
        "versions": {"package": __version__},
        "scenarios": scenarios,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    exit_code = 0
    if failures:
        first = failures[0]
        exit_code = 4 if first.startswith("TrainingError") else \
            2 if first.startswith("ConfigError") else 3
    return manifest, exit_code
