"""Seeded synthetic fixture: a 6-station ring with weather-driven flows.

Flows follow a sinusoidal daily profile, dip on weekends, and react to
regional weather (precipitation episodes suppress traffic, temperature
nudges it). Two stations report sparsely, which exercises availability
weighting, gap interpolation, and window exclusion downstream. Running
``python -m flowcast.synthetic --out DIR`` writes the five CSV inputs.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
import pandas as pd

from .ingest import FLOW_CADENCE_MINUTES, decode_precipitation

STEPS_PER_DAY = 24 * 60 // FLOW_CADENCE_MINUTES

STATIONS = (
    # id, lat, lon, kind
    ("S0", 45.560, -122.680, "CCS"),
    ("S1", 45.545, -122.620, "CCS"),
    ("S2", 45.505, -122.615, "CCS"),
    ("S3", 45.480, -122.680, "N-CCS"),
    ("S4", 45.505, -122.745, "CCS"),
    ("S5", 45.545, -122.740, "N-CCS"),
)

RING_MINUTES = (6.0, 7.5, 9.0, 6.5, 8.0, 7.0)
CHORD_MINUTES = 24.0  # S0 <-> S3 across the ring

SENSORS = (
    ("W0", 45.555, -122.700),
    ("W1", 45.490, -122.630),
    ("W2", 45.530, -122.600),
)

BASE_FLOWS = (120.0, 95.0, 140.0, 80.0, 110.0, 88.0)
PHASES = (0.0, 0.35, 0.70, 1.05, 1.40, 1.75)


def _regional_weather(steps: int, rng: np.random.Generator):
    """Temperature, wind, and precipitation level series for the region."""
    t = np.arange(steps)
    tod = t % STEPS_PER_DAY
    day = t // STEPS_PER_DAY
    day_offsets = rng.normal(0.0, 3.0, size=day.max() + 1)
    temp = 48.0 + 14.0 * np.sin(2 * np.pi * tod / STEPS_PER_DAY - np.pi / 2)
    temp = temp + day_offsets[day]
    wind = 6.0 + 3.0 * np.sin(4 * np.pi * tod / STEPS_PER_DAY + 0.7)
    wind = np.maximum(0.0, wind + rng.normal(0.0, 0.6, size=steps))
    precip = np.zeros(steps, dtype=int)
    for d in range(day.max() + 1):
        if rng.random() < 0.40:
            start = d * STEPS_PER_DAY + rng.integers(0, STEPS_PER_DAY)
            length = int(rng.integers(8, 32))
            level = int(rng.integers(1, 4))
            precip[start:start + length] = level
    return temp, wind, precip


def _station_flows(steps: int, temp, wind, precip, rng: np.random.Generator):
    """(steps, 6) nonnegative counts coupling the daily cycle to weather."""
    t = np.arange(steps)
    tod = t % STEPS_PER_DAY
    dow = (t // STEPS_PER_DAY) % 7
    weekend = np.where(np.isin(dow, (5, 6)), 0.80, 1.0)
    weather = (1.0 - 0.13 * precip) * (1.0 + 0.006 * (temp - 55.0)) \
        * (1.0 - 0.01 * (wind - 6.0))
    flows = np.empty((steps, len(STATIONS)))
    for i, (base, phase) in enumerate(zip(BASE_FLOWS, PHASES)):
        daily = 1.0 + 0.45 * np.sin(2 * np.pi * tod / STEPS_PER_DAY - np.pi / 2 + phase)
        noise = rng.normal(0.0, 2.5, size=steps)
        flows[:, i] = np.maximum(0.0, base * weekend * daily * weather + noise)
    return np.rint(flows)


def _gap_steps(steps: int, rng: np.random.Generator, spans: list[int]) -> set[int]:
    """Block positions to drop from a sparse station's record."""
    dropped: set[int] = set()
    for span in spans:
        start = int(rng.integers(STEPS_PER_DAY, steps - span))
        dropped.update(range(start, start + span))
    return dropped


def generate(out_dir, days: int = 14, seed: int = 7,
             start: str = "2024-01-01") -> dict[str, Path]:
    """Write stations, flows, weather, sensors, and travel-time CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    steps = days * STEPS_PER_DAY
    timestamps = pd.date_range(start, periods=steps, freq=f"{FLOW_CADENCE_MINUTES}min")
    stamp = timestamps.strftime("%Y-%m-%d %H:%M:%S")

    temp, wind, precip = _regional_weather(steps, rng)
    flows = _station_flows(steps, temp, wind, precip, rng)

    gaps = {
        "S3": _gap_steps(steps, rng, [2, 2, 8]),
        "S5": _gap_steps(steps, rng, [3, 3, 3]),
    }

    flow_rows = []
    counts = {}
    for i, (sid, *_rest) in enumerate(STATIONS):
        dropped = gaps.get(sid, set())
        kept = [t for t in range(steps) if t not in dropped]
        counts[sid] = len(kept)
        flow_rows.extend((sid, stamp[t], flows[t, i]) for t in kept)
    flows_df = pd.DataFrame(flow_rows, columns=["station_id", "timestamp", "flow"])

    stations_df = pd.DataFrame(
        [(sid, lat, lon, kind, counts[sid]) for sid, lat, lon, kind in STATIONS],
        columns=["id", "lat", "lon", "kind", "count_total"])

    sensor_offsets = {"W0": -1.5, "W1": 0.8, "W2": 2.1}
    weather_rows = []
    for sid, _lat, _lon in SENSORS:
        s_temp = temp + sensor_offsets[sid] + rng.normal(0.0, 0.8, size=steps)
        s_wind = np.maximum(0.0, wind + rng.normal(0.0, 0.5, size=steps))
        weather_rows.extend(
            (sid, stamp[t], round(float(s_temp[t]), 2), round(float(s_wind[t]), 2),
             decode_precipitation(int(precip[t])))
            for t in range(steps))
    weather_df = pd.DataFrame(
        weather_rows,
        columns=["sensor_id", "timestamp", "temp_f", "wind_mph", "precip_type"])
    sensors_df = pd.DataFrame(SENSORS, columns=["sensor_id", "lat", "lon"])

    ids = [sid for sid, *_ in STATIONS]
    edges = []
    for i, minutes in enumerate(RING_MINUTES):
        j = (i + 1) % len(ids)
        edges.append((ids[i], ids[j], minutes))
        edges.append((ids[j], ids[i], minutes + 0.5))
    edges.append(("S0", "S3", CHORD_MINUTES))
    edges.append(("S3", "S0", CHORD_MINUTES + 1.0))
    travel_df = pd.DataFrame(edges, columns=["from_id", "to_id", "minutes"])

    paths = {}
    for name, df in (("stations", stations_df), ("flows", flows_df),
                     ("weather", weather_df), ("sensors", sensors_df),
                     ("travel_time", travel_df)):
        path = out / f"{name}.csv"
        df.to_csv(path, index=False)
        paths[name] = path
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Generate the synthetic 6-station fixture dataset.")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--days", type=int, default=14)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    paths = generate(args.out, days=args.days, seed=args.seed)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
