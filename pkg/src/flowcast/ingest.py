"""Load, validate, and clean the five input tables.

Expected files inside the data directory (UTF-8 CSV, header row,
ISO-8601 timestamps):

    stations.csv     id,lat,lon,kind,count_total
    flows.csv        station_id,timestamp,flow
    weather.csv      sensor_id,timestamp,temp_f,wind_mph,precip_type
    sensors.csv      sensor_id,lat,lon
    travel_time.csv  from_id,to_id,minutes[,hour]

The optional ``hour`` column on travel_time.csv marks each row as one
historical observation taken during that hour of day (0-23); repeated
rows per link are averaged into the mean-travel-time matrix after
sub-floor readings have been repaired.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DataError

TRAVEL_TIME_FLOOR_MINUTES = 1.65
FLOW_CADENCE_MINUTES = 15
MAX_INTERP_GAP_STEPS = 4

#: Ordinal severity encoding for categorical precipitation labels.
PRECIPITATION_CODES = {
    "No Precip": 0,
    "Light": 1,
    "Moderate": 2,
    "Heavy Rain": 3,
    "Heavy Snow": 4,
    "Ice/Freezing": 5,
}
_PRECIPITATION_LABELS = {v: k for k, v in PRECIPITATION_CODES.items()}

REQUIRED_FILES = {
    "stations": "stations.csv",
    "flows": "flows.csv",
    "weather": "weather.csv",
    "sensors": "sensors.csv",
    "travel_time": "travel_time.csv",
}

_SCHEMAS = {
    "stations": ["id", "lat", "lon", "kind", "count_total"],
    "flows": ["station_id", "timestamp", "flow"],
    "weather": ["sensor_id", "timestamp", "temp_f", "wind_mph", "precip_type"],
    "sensors": ["sensor_id", "lat", "lon"],
    "travel_time": ["from_id", "to_id", "minutes"],
}


class StationKind(Enum):
    CCS = "CCS"
    NCCS = "N-CCS"


@dataclass(frozen=True)
class StationRecord:
    station_id: str
    latitude: float
    longitude: float
    kind: StationKind
    raw_count_total: int

    def __post_init__(self):
        if not -90 <= self.latitude <= 90:
            raise DataError(f"station {self.station_id}: latitude {self.latitude} outside [-90, 90]")
        if not -180 <= self.longitude <= 180:
            raise DataError(f"station {self.station_id}: longitude {self.longitude} outside [-180, 180]")
        if self.raw_count_total < 0:
            raise DataError(f"station {self.station_id}: negative count_total")


@dataclass
class TravelTimeMatrix:
    """Dense minutes matrix; NaN marks links that do not exist.

    ``flagged`` is True where a listed link currently holds an invalid
    (sub-floor or unparseable) value awaiting repair. ``observations``
    keeps the raw per-link history as (hour-or-None, minutes) pairs so
    repair can use time-of-day medians.
    """

    station_ids: list[str]
    minutes: np.ndarray
    flagged: np.ndarray
    observations: dict[tuple[int, int], list[tuple[int | None, float]]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.station_ids)

    def present_mask(self) -> np.ndarray:
        """Links that exist (listed in the input), diagonal excluded."""
        mask = ~np.isnan(self.minutes) | self.flagged
        np.fill_diagonal(mask, False)
        return mask


@dataclass
class FlowTensor:
    """Per-station flow series on a uniform 15-min grid.

    ``valid`` is False where a gap was too long to interpolate; windows
    touching such steps are excluded from training.
    """

    station_ids: list[str]
    timestamps: pd.DatetimeIndex
    values: np.ndarray          # (T, n)
    valid: np.ndarray           # (T, n) bool

    @property
    def n(self) -> int:
        return len(self.station_ids)


@dataclass
class NormalizationParams:
    station_ids: list[str]
    minimum: np.ndarray
    scale: np.ndarray           # max - min; 0 for constant series

    def to_dict(self) -> dict:
        return {
            "station_ids": list(self.station_ids),
            "minimum": self.minimum.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "NormalizationParams":
        return cls(
            station_ids=list(raw["station_ids"]),
            minimum=np.asarray(raw["minimum"], dtype=np.float64),
            scale=np.asarray(raw["scale"], dtype=np.float64),
        )


@dataclass
class IngestConfig:
    floor_minutes: float = TRAVEL_TIME_FLOOR_MINUTES
    cadence_minutes: int = FLOW_CADENCE_MINUTES
    max_gap_steps: int = MAX_INTERP_GAP_STEPS


@dataclass
class IngestReport:
    rows: dict[str, int] = field(default_factory=dict)
    dropped: dict[str, int] = field(default_factory=dict)
    repaired_travel_times: int = 0
    interpolated_flow_steps: int = 0
    invalid_flow_steps: int = 0

    def lines(self) -> list[str]:
        out = []
        for table in sorted(self.rows):
            out.append(f"{table}: {self.rows[table]} rows, {self.dropped.get(table, 0)} dropped")
        out.append(f"travel-time readings repaired: {self.repaired_travel_times}")
        out.append(f"flow steps interpolated: {self.interpolated_flow_steps}")
        out.append(f"flow steps left invalid: {self.invalid_flow_steps}")
        return out


@dataclass
class Dataset:
    stations: list[StationRecord]
    travel_time: TravelTimeMatrix
    flows: FlowTensor
    weather: pd.DataFrame        # sensor_id,timestamp,temp_f,wind_mph,precip
    sensors: pd.DataFrame        # sensor_id,lat,lon
    report: IngestReport

    @property
    def station_ids(self) -> list[str]:
        return [s.station_id for s in self.stations]

    def station_index(self) -> dict[str, int]:
        return {s.station_id: i for i, s in enumerate(self.stations)}


def encode_precipitation(label: str) -> int:
    """Map a categorical precipitation label onto its severity ordinal."""
    try:
        return PRECIPITATION_CODES[label]
    except KeyError:
        raise DataError(
            f"unknown precipitation category {label!r}; expected one of "
            f"{sorted(PRECIPITATION_CODES)}"
        )


def decode_precipitation(code: int) -> str:
    try:
        return _PRECIPITATION_LABELS[code]
    except KeyError:
        raise DataError(f"unknown precipitation ordinal {code}")


def _read_csv(path: Path, table: str) -> pd.DataFrame:
    if not path.exists():
        raise DataError(f"missing input file: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except Exception as exc:
        raise DataError(f"{path}: failed to parse CSV: {exc}")
    required = _SCHEMAS[table]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing required columns {missing} (found {list(df.columns)})")
    return df


def _parse_float(value: str, path: Path, line: int, column: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataError(f"{path} line {line}: column {column!r} is not numeric: {value!r}")


def lower_median(values: list[float]) -> float:
    """Median taking the lower of the two central elements on even counts."""
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def load_stations(path: Path) -> list[StationRecord]:
    df = _read_csv(path, "stations")
    records = []
    seen = set()
    for row in df.itertuples():
        line = row.Index + 2  # header is line 1
        if row.id in seen:
            raise DataError(f"{path} line {line}: duplicate station id {row.id!r}")
        seen.add(row.id)
        try:
            kind = StationKind(row.kind)
        except ValueError:
            raise DataError(f"{path} line {line}: kind must be CCS or N-CCS, got {row.kind!r}")
        count = _parse_float(row.count_total, path, line, "count_total")
        if count != int(count) or count < 0:
            raise DataError(f"{path} line {line}: count_total must be a nonnegative integer")
        records.append(StationRecord(
            station_id=row.id,
            latitude=_parse_float(row.lat, path, line, "lat"),
            longitude=_parse_float(row.lon, path, line, "lon"),
            kind=kind,
            raw_count_total=int(count),
        ))
    if not records:
        raise DataError(f"{path}: no stations")
    return records


def load_travel_times(path: Path, station_ids: list[str], floor: float,
                      report: IngestReport) -> TravelTimeMatrix:
    df = _read_csv(path, "travel_time")
    report.rows["travel_time"] = len(df)
    has_hour = "hour" in df.columns
    index = {sid: i for i, sid in enumerate(station_ids)}
    n = len(station_ids)
    observations: dict[tuple[int, int], list[tuple[int | None, float]]] = {}
    for row in df.itertuples():
        line = row.Index + 2
        for sid in (row.from_id, row.to_id):
            if sid not in index:
                raise DataError(f"{path} line {line}: unknown station id {sid!r}")
        i, j = index[row.from_id], index[row.to_id]
        if i == j:
            raise DataError(f"{path} line {line}: self-link {row.from_id!r} not allowed")
        hour = None
        if has_hour and row.hour != "":
            h = _parse_float(row.hour, path, line, "hour")
            if h != int(h) or not 0 <= h <= 23:
                raise DataError(f"{path} line {line}: hour must be an integer in [0, 23]")
            hour = int(h)
        try:
            minutes = float(row.minutes)
        except ValueError:
            minutes = float("nan")
        observations.setdefault((i, j), []).append((hour, minutes))

    minutes = np.full((n, n), np.nan)
    flagged = np.zeros((n, n), dtype=bool)
    for (i, j), obs in observations.items():
        vals = [m for _, m in obs if np.isfinite(m) and m >= floor]
        if vals:
            minutes[i, j] = float(np.mean(vals))
        if len(vals) < len(obs):
            flagged[i, j] = True
    return TravelTimeMatrix(station_ids=list(station_ids), minutes=minutes,
                            flagged=flagged, observations=observations)


def clean_travel_times(matrix: TravelTimeMatrix,
                       floor: float = TRAVEL_TIME_FLOOR_MINUTES) -> TravelTimeMatrix:
    """Repair sub-floor travel-time readings.

    Each invalid reading is replaced by the lower-index median of the
    same link's valid readings in the same hour bucket, else across all
    hours, else by the median of the station's other outgoing links. A
    station whose row holds no usable reading at all is an error.
    """
    if not floor > 0:
        raise DataError(f"floor must be > 0, got {floor}")
    n = matrix.n
    repaired = np.full((n, n), np.nan)
    flagged_links: list[tuple[int, int]] = []
    for (i, j), obs in matrix.observations.items():
        valid = [m for _, m in obs if np.isfinite(m) and m >= floor]
        bad = [(h, m) for h, m in obs if not (np.isfinite(m) and m >= floor)]
        if not bad:
            repaired[i, j] = float(np.mean(valid))
            continue
        if not valid:
            flagged_links.append((i, j))
            continue
        fixed = []
        for hour, _ in bad:
            same_hour = [m for h, m in obs if h == hour and np.isfinite(m) and m >= floor]
            pool = same_hour if (hour is not None and same_hour) else valid
            fixed.append(lower_median(pool))
        repaired[i, j] = float(np.mean(valid + fixed))

    # Links with no valid reading anywhere fall back to the row median.
    for i, j in flagged_links:
        row = repaired[i, :]
        row_vals = row[np.isfinite(row)]
        if row_vals.size == 0:
            raise DataError(
                f"station {matrix.station_ids[i]}: no usable travel-time reading on any outgoing link"
            )
        repaired[i, j] = lower_median(row_vals.tolist())

    for i in range(n):
        listed = [j for (a, j) in matrix.observations if a == i]
        if not listed:
            continue
        if not np.isfinite(repaired[i, listed]).all():
            raise DataError(f"station {matrix.station_ids[i]}: travel-time row could not be repaired")

    return TravelTimeMatrix(
        station_ids=list(matrix.station_ids),
        minutes=repaired,
        flagged=np.zeros((n, n), dtype=bool),
        observations=matrix.observations,
    )


def load_flows(path: Path, station_ids: list[str], cadence_minutes: int,
               max_gap_steps: int, report: IngestReport) -> FlowTensor:
    df = _read_csv(path, "flows")
    report.rows["flows"] = len(df)
    known = set(station_ids)
    dropped = 0

    parsed: dict[str, dict[pd.Timestamp, float]] = {sid: {} for sid in station_ids}
    for row in df.itertuples():
        line = row.Index + 2
        if row.station_id not in known:
            raise DataError(f"{path} line {line}: unknown station id {row.station_id!r}")
        try:
            ts = pd.Timestamp(row.timestamp)
        except ValueError:
            raise DataError(f"{path} line {line}: bad timestamp {row.timestamp!r}")
        flow = _parse_float(row.flow, path, line, "flow")
        if flow < 0 or ts in parsed[row.station_id]:
            dropped += 1
            continue
        parsed[row.station_id][ts] = flow
    report.dropped["flows"] = dropped

    all_ts = sorted({ts for series in parsed.values() for ts in series})
    if not all_ts:
        raise DataError(f"{path}: no usable flow rows")
    step = pd.Timedelta(minutes=cadence_minutes)
    grid = pd.date_range(all_ts[0], all_ts[-1], freq=step)
    offgrid = [ts for ts in all_ts if (ts - all_ts[0]) % step != pd.Timedelta(0)]
    if offgrid:
        raise DataError(
            f"{path}: {len(offgrid)} timestamps off the {cadence_minutes}-min grid, "
            f"first {offgrid[0]}"
        )

    T, n = len(grid), len(station_ids)
    values = np.full((T, n), np.nan)
    pos = {ts: k for k, ts in enumerate(grid)}
    for col, sid in enumerate(station_ids):
        for ts, flow in parsed[sid].items():
            values[pos[ts], col] = flow

    valid = np.isfinite(values)
    interpolated = 0
    for col in range(n):
        series = values[:, col]
        missing = ~np.isfinite(series)
        if not missing.any():
            continue
        if missing.all():
            raise DataError(f"station {station_ids[col]}: no flow data at all")
        # Fill runs of at most max_gap_steps interior steps linearly.
        k = 0
        while k < T:
            if not missing[k]:
                k += 1
                continue
            start = k
            while k < T and missing[k]:
                k += 1
            end = k  # run is [start, end)
            interior = start > 0 and end < T
            if interior and (end - start) <= max_gap_steps:
                lo, hi = series[start - 1], series[end]
                frac = np.arange(1, end - start + 1) / (end - start + 1)
                series[start:end] = lo + frac * (hi - lo)
                valid[start:end, col] = True
                interpolated += end - start
        values[:, col] = series
    report.interpolated_flow_steps = interpolated
    report.invalid_flow_steps = int((~valid).sum())
    values[~valid] = 0.0
    return FlowTensor(station_ids=list(station_ids), timestamps=grid,
                      values=values, valid=valid)


def load_weather(weather_path: Path, sensors_path: Path,
                 report: IngestReport) -> tuple[pd.DataFrame, pd.DataFrame]:
    sensors = _read_csv(sensors_path, "sensors")
    report.rows["sensors"] = len(sensors)
    if sensors["sensor_id"].duplicated().any():
        dup = sensors.loc[sensors["sensor_id"].duplicated(), "sensor_id"].iloc[0]
        raise DataError(f"{sensors_path}: duplicate sensor id {dup!r}")
    sensors = pd.DataFrame({
        "sensor_id": sensors["sensor_id"],
        "lat": sensors["lat"].astype(float),
        "lon": sensors["lon"].astype(float),
    })

    df = _read_csv(weather_path, "weather")
    report.rows["weather"] = len(df)
    known = set(sensors["sensor_id"])
    records = []
    for row in df.itertuples():
        line = row.Index + 2
        if row.sensor_id not in known:
            raise DataError(f"{weather_path} line {line}: unknown sensor id {row.sensor_id!r}")
        try:
            ts = pd.Timestamp(row.timestamp)
        except ValueError:
            raise DataError(f"{weather_path} line {line}: bad timestamp {row.timestamp!r}")
        records.append((
            row.sensor_id, ts,
            _parse_float(row.temp_f, weather_path, line, "temp_f"),
            _parse_float(row.wind_mph, weather_path, line, "wind_mph"),
            encode_precipitation(row.precip_type),
        ))
    weather = pd.DataFrame(records, columns=["sensor_id", "timestamp", "temp_f", "wind_mph", "precip"])
    for sid, group in weather.groupby("sensor_id"):
        ts = group["timestamp"].to_numpy()
        if len(ts) > 1 and not (ts[1:] > ts[:-1]).all():
            raise DataError(f"weather sensor {sid}: timestamps not strictly increasing")
    return weather, sensors


def load_dataset(data_dir: str | Path, config: IngestConfig | None = None) -> Dataset:
    """Load, validate, and clean all five tables from ``data_dir``."""
    config = config or IngestConfig()
    data_dir = Path(data_dir)
    report = IngestReport()

    stations = load_stations(data_dir / REQUIRED_FILES["stations"])
    report.rows["stations"] = len(stations)
    station_ids = [s.station_id for s in stations]

    raw_tt = load_travel_times(data_dir / REQUIRED_FILES["travel_time"], station_ids,
                               config.floor_minutes, report)
    report.repaired_travel_times = int(raw_tt.flagged.sum())
    travel_time = clean_travel_times(raw_tt, config.floor_minutes)

    flows = load_flows(data_dir / REQUIRED_FILES["flows"], station_ids,
                       config.cadence_minutes, config.max_gap_steps, report)
    weather, sensors = load_weather(data_dir / REQUIRED_FILES["weather"],
                                    data_dir / REQUIRED_FILES["sensors"], report)
    return Dataset(stations=stations, travel_time=travel_time, flows=flows,
                   weather=weather, sensors=sensors, report=report)


class FlowNormalizer(TransformerMixin, BaseEstimator):
    """Per-station min-max scaler fit on the training split only.

    Columns are stations. A constant training series maps to all zeros
    (scale 0) with a warning; its inverse returns the constant.
    """

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.size == 0:
            raise DataError("expected a nonempty (time, station) array")
        self.min_ = X.min(axis=0)
        self.scale_ = X.max(axis=0) - self.min_
        constant = self.scale_ == 0
        if constant.any():
            warnings.warn(
                f"{int(constant.sum())} constant flow series scaled to 0",
                stacklevel=2,
            )
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        safe = np.where(self.scale_ == 0, 1.0, self.scale_)
        out = (X - self.min_) / safe
        return np.where(self.scale_ == 0, 0.0, out)

    def inverse_transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        return X * self.scale_ + self.min_

    def params(self, station_ids: list[str]) -> NormalizationParams:
        return NormalizationParams(station_ids=list(station_ids),
                                   minimum=self.min_.copy(), scale=self.scale_.copy())

    @classmethod
    def from_params(cls, params: NormalizationParams) -> "FlowNormalizer":
        inst = cls()
        inst.min_ = np.asarray(params.minimum, dtype=np.float64)
        inst.scale_ = np.asarray(params.scale, dtype=np.float64)
        return inst


def normalize_flows(values: np.ndarray, train_len: int,
                    station_ids: list[str]) -> tuple[np.ndarray, NormalizationParams]:
    """Min-max scale (T, n) flows using the first ``train_len`` rows."""
    if train_len < 1 or train_len > len(values):
        raise DataError(f"train_len {train_len} outside [1, {len(values)}]")
    norm = FlowNormalizer().fit(values[:train_len])
    return norm.transform(values), norm.params(station_ids)
