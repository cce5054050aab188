"""Command-line interface.

Subcommands: validate, adjacency, train, predict, baselines,
run-scenarios, report. Options come from an optional TOML config file
with command-line flags taking precedence. Exit codes: 0 success,
2 configuration error, 3 data error, 4 training failure. Set
FLOWCAST_LOG_LEVEL (e.g. INFO, DEBUG) to control stage logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from .config import RunConfig, load_run_config
from .errors import ConfigError, DataError, FlowcastError, TrainingError
from .graph import availability_matrix, build_graph, filter_stations
from .ingest import FLOW_CADENCE_MINUTES, FlowNormalizer, load_dataset
from .metrics import scenario_table, score_points
from .scenarios import (TIMESTAMP_FORMAT, baseline_predictions, prepare,
                        run_all, run_scenario, scenario_adjacency,
                        scenario_dir_name)
from .training import WeatherScaler, load_checkpoint
from .weather import interpolate_stations, weather_features

_OVERRIDE_FIELDS = (
    "data_dir", "output_dir", "samples", "aggregation", "alpha", "seed",
    "kernel_sigma", "look_back", "horizon", "heads", "head_dim", "hidden",
    "learning_rate", "batch_size", "max_epochs", "patience",
    "min_availability", "denormalized",
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file; flags override it")
    parser.add_argument("--data-dir", dest="data_dir")
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--cv", dest="cv_levels", type=float, nargs="+",
                        metavar="CV", help="coefficient-of-variation levels")
    parser.add_argument("--samples", type=int)
    parser.add_argument("--aggregation", choices=("mean", "per_sample"))
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--kernel-sigma", dest="kernel_sigma", type=float)
    parser.add_argument("--look-back", dest="look_back", type=int)
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--heads", type=int)
    parser.add_argument("--head-dim", dest="head_dim", type=int)
    parser.add_argument("--hidden", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--max-epochs", dest="max_epochs", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--min-availability", dest="min_availability", type=float)
    parser.add_argument("--denormalized", action="store_const", const=True,
                        default=None, help="also report vehicle-unit metrics")


def _build_config(args: argparse.Namespace) -> RunConfig:
    overrides = {name: getattr(args, name) for name in _OVERRIDE_FIELDS}
    if args.cv_levels is not None:
        overrides["cv_levels"] = tuple(args.cv_levels)
    if args.config:
        return load_run_config(args.config, overrides)
    provided = {k: v for k, v in overrides.items() if v is not None}
    if "data_dir" not in provided:
        raise ConfigError("either --config or --data-dir is required")
    return RunConfig(**provided)


# -- subcommands ---------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    config = _build_config(args)
    dataset = load_dataset(config.data_dir)
    graph = filter_stations(build_graph(dataset.stations, dataset.travel_time),
                            config.min_availability)
    avail = availability_matrix(graph)
    for line in dataset.report.lines():
        print(line)
    edges = int(graph.travel_time.present_mask().sum())
    print(f"stations retained: {graph.n} of {len(dataset.stations)}")
    print(f"directed links: {edges}")
    print(f"availability range: [{avail.values.min():.4f}, {avail.values.max():.4f}]")
    print("dataset ok")
    return 0


def cmd_adjacency(args: argparse.Namespace) -> int:
    config = _build_config(args)
    prepared = prepare(config)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cv in config.cv_levels:
        adjacency, _weights = scenario_adjacency(prepared, config, cv)
        matrices = adjacency if isinstance(adjacency, list) else [adjacency]
        for entry in matrices:
            suffix = "" if entry.sample_index is None else f"_m{entry.sample_index}"
            path = out_dir / f"adjacency_cv{cv:g}{suffix}.csv"
            entry.write_csv(path)
            print(path)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _build_config(args)
    if len(config.cv_levels) != 1:
        raise ConfigError(
            f"train expects exactly one CV level (use --cv); got {list(config.cv_levels)}")
    cv = config.cv_levels[0]
    prepared = prepare(config)
    scen_dir = Path(config.output_dir) / scenario_dir_name(cv)
    metrics = run_scenario(prepared, config, cv, scen_dir)
    print(f"checkpoint: {scen_dir / 'checkpoint.bin'}")
    print(f"calibration: {scen_dir / 'calibration.json'}")
    print(f"metrics: {scen_dir / 'metrics.json'}")
    model = metrics["methods"]["model"]
    print(f"test mae {model['mae']:.6f}  rmse {model['rmse']:.6f}  "
          f"picp {model['picp']:.4f}  mpiw {model['mpiw']:.6f}")
    return 0


def _predict_window(checkpoint, dataset):
    """Latest valid look-back window in checkpoint station order."""
    column = {sid: i for i, sid in enumerate(dataset.flows.station_ids)}
    missing = [sid for sid in checkpoint.station_ids if sid not in column]
    if missing:
        raise DataError(f"dataset lacks checkpoint stations: {missing}")
    cols = [column[sid] for sid in checkpoint.station_ids]
    look_back = checkpoint.config.look_back
    values = dataset.flows.values[:, cols]
    valid = dataset.flows.valid[:, cols]
    if len(values) < look_back:
        raise DataError(f"need {look_back} steps of history, have {len(values)}")
    if not valid[-look_back:].all():
        raise DataError("the most recent look-back window contains invalid steps")
    by_id = {s.station_id: s for s in dataset.stations}
    stations = [by_id[sid] for sid in checkpoint.station_ids]
    series = interpolate_stations(stations, dataset.sensors, dataset.weather)
    feats = weather_features(series, list(checkpoint.station_ids),
                             dataset.flows.timestamps[-look_back:])
    scaler = WeatherScaler.from_dict(checkpoint.meta["weather_scaler"])
    norm = FlowNormalizer.from_params(checkpoint.normalization)
    flows_norm = norm.transform(values[-look_back:])
    window = np.concatenate([flows_norm[..., None], scaler.transform(feats)],
                            axis=-1)[None]
    return window, norm, dataset.flows.timestamps[-1]


def cmd_predict(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    if args.config or args.data_dir:
        config = _build_config(args)
        data_dir = config.data_dir
    else:
        raise ConfigError("predict needs --data-dir (or --config) for the window")
    dataset = load_dataset(data_dir)
    window, norm, last_stamp = _predict_window(checkpoint, dataset)
    model = checkpoint.model()
    points_norm = model.predict(window)[0]        # (stations, horizon)

    quantile = None
    if args.calibration:
        with open(args.calibration) as fh:
            calibration = json.load(fh)
        quantile = float(calibration["quantile"])
    else:
        warnings.warn("no calibration file given; emitting point forecasts only")

    rows = []
    step = pd.Timedelta(minutes=FLOW_CADENCE_MINUTES)
    for k in range(checkpoint.config.horizon):
        stamp = (last_stamp + step * (k + 1)).strftime(TIMESTAMP_FORMAT)
        col = norm.inverse_transform(points_norm[None, :, k])[0]
        if quantile is None:
            rows.extend([sid, stamp, repr(float(col[s]))]
                        for s, sid in enumerate(checkpoint.station_ids))
        else:
            lo = norm.inverse_transform((points_norm[:, k] - quantile)[None])[0]
            hi = norm.inverse_transform((points_norm[:, k] + quantile)[None])[0]
            rows.extend([sid, stamp, repr(float(col[s])), repr(float(lo[s])),
                         repr(float(hi[s]))]
                        for s, sid in enumerate(checkpoint.station_ids))
    header = ["station_id", "timestamp", "point"]
    if quantile is not None:
        header += ["lower", "upper"]
    lines = [",".join(header)] + [",".join(r) for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(args.out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_baselines(args: argparse.Namespace) -> int:
    config = _build_config(args)
    prepared = prepare(config)
    windows = prepared.windows
    truth = windows.targets[windows.test_slice]
    scenario = {"cv": 0.0, "methods": {}}
    for name, pred in sorted(baseline_predictions(prepared).items()):
        scenario["methods"][name] = score_points(truth, pred).to_dict()
    for name, entry in scenario["methods"].items():
        print(f"{name:4s}  mae {entry['mae']:.6f}  rmse {entry['rmse']:.6f}  "
              f"n {entry['count']}")
    return 0


def cmd_run_scenarios(args: argparse.Namespace) -> int:
    config = _build_config(args)
    manifest, exit_code = run_all(config, parallel=args.parallel_scenarios)
    for entry in manifest["scenarios"]:
        line = f"cv={entry['cv']:g}: {entry['status']}"
        if entry["status"] != "ok":
            line += f" ({entry['error']})"
        print(line)
    print(f"manifest: {Path(config.output_dir) / 'manifest.json'}")
    return exit_code


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest at {manifest_path}; run run-scenarios first")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    scenarios = []
    for entry in manifest["scenarios"]:
        if entry["status"] != "ok":
            continue
        with open(run_dir / scenario_dir_name(entry["cv"]) / "metrics.json") as fh:
            scenarios.append(json.load(fh))
    report, text = scenario_table(scenarios)
    print(text)
    report_path = run_dir / "report.json"
    with open(report_path, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
    print(f"\nreport: {report_path}")
    return 0


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowcast",
        description="Traffic flow forecasting on station graphs with "
                    "stochastic adjacency and conformal intervals.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="load and sanity-check a dataset")
    _add_config_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("adjacency", help="build and dump adjacency matrices")
    _add_config_flags(p)
    p.set_defaults(func=cmd_adjacency)

    p = sub.add_parser("train", help="train one scenario and save artifacts")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="forecast the next steps from a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--calibration", help="calibration JSON for interval bounds")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("baselines", help="score HA/SAF/LTM on the test windows")
    _add_config_flags(p)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("run-scenarios", help="full CV sweep with manifest")
    _add_config_flags(p)
    p.add_argument("--parallel-scenarios", type=int, default=1, metavar="N")
    p.set_defaults(func=cmd_run_scenarios)

    p = sub.add_parser("report", help="combine scenario metrics into a table")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("FLOWCAST_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return 4
    except (DataError, FlowcastError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
