"""Weather fusion: sensor-to-station interpolation and edge adjustment.

Sensor readings are mapped onto stations by inverse distance weighting
over the K nearest sensors (great-circle distance), independently per
variable and timestamp. Per-edge Pearson correlations between sampled
travel times and midpoint station weather feed a cross-edge regression
whose normalized absolute coefficients weight the final multiplicative
travel-time adjustment.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError
from .ingest import StationRecord, TravelTimeMatrix
from .stochastic import STREAM_WEATHER_ALIGN, lognormal_draws

EARTH_RADIUS_KM = 6371.0088
DEFAULT_K_NEAREST = 3
DEFAULT_POWER = 2.0
DEFAULT_EPSILON_KM = 1e-6

VARIABLES = ("temp", "wind", "precip")


def haversine_km(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Great-circle distance in km between coordinate pairs, in degrees."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=np.float64))
                              for x in (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(h))


@dataclass
class StationWeatherSeries:
    """Interpolated hourly weather at one station."""

    station_id: str
    timestamps: pd.DatetimeIndex
    temp: np.ndarray
    wind: np.ndarray
    precip: np.ndarray

    def variable(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def at(self, timestamps: pd.DatetimeIndex) -> "StationWeatherSeries":
        """Resample onto a finer grid by forward fill.

        Steps before the first observation take the first value so the
        result is defined everywhere.
        """
        frame = pd.DataFrame(
            {"temp": self.temp, "wind": self.wind, "precip": self.precip},
            index=self.timestamps,
        )
        out = frame.reindex(timestamps, method="ffill").bfill()
        return StationWeatherSeries(
            station_id=self.station_id,
            timestamps=timestamps,
            temp=out["temp"].to_numpy(),
            wind=out["wind"].to_numpy(),
            precip=out["precip"].to_numpy(),
        )


@dataclass(frozen=True)
class EdgeWeatherCorrelations:
    """Pearson coefficients per variable; None where undefined
    (constant series on either side)."""

    temp: float | None
    wind: float | None
    precip: float | None

    def defined(self) -> bool:
        return None not in (self.temp, self.wind, self.precip)

    def as_array(self) -> np.ndarray:
        return np.array([0.0 if v is None else v for v in (self.temp, self.wind, self.precip)])


@dataclass
class WeatherWeights:
    alpha_temp: float
    alpha_wind: float
    alpha_precip: float
    beta_temp: float
    beta_wind: float
    beta_precip: float
    intercept: float
    residual_std: float
    fallback: bool = False

    @property
    def alphas(self) -> np.ndarray:
        return np.array([self.alpha_temp, self.alpha_wind, self.alpha_precip])

    @property
    def betas(self) -> np.ndarray:
        return np.array([self.beta_temp, self.beta_wind, self.beta_precip])


def idw_interpolate(station: StationRecord, sensors: pd.DataFrame,
                    weather: pd.DataFrame, k_nearest: int = DEFAULT_K_NEAREST,
                    power: float = DEFAULT_POWER,
                    epsilon_km: float = DEFAULT_EPSILON_KM) -> StationWeatherSeries:
    """Interpolate all weather variables at one station.

    At each timestamp the K nearest sensors that reported are averaged
    with weights 1/(d+eps)^p. Fewer than K reporting sensors triggers a
    warning and uses whatever is available; none at all is an error.
    """
    if len(sensors) == 0:
        raise DataError(f"station {station.station_id}: no weather sensors available")
    if k_nearest < 1:
        raise DataError(f"k_nearest must be >= 1, got {k_nearest}")

    dist = haversine_km(station.latitude, station.longitude,
                        sensors["lat"].to_numpy(), sensors["lon"].to_numpy())
    order = np.argsort(dist, kind="stable")
    inv_w = 1.0 / (dist[order] + epsilon_km) ** power

    timestamps = pd.DatetimeIndex(sorted(weather["timestamp"].unique()))
    if len(timestamps) == 0:
        raise DataError(f"station {station.station_id}: weather table is empty")
    sensor_ids = sensors["sensor_id"].tolist()
    columns = {}
    short_rows = 0
    for var, col in (("temp", "temp_f"), ("wind", "wind_mph"), ("precip", "precip")):
        table = weather.pivot(index="timestamp", columns="sensor_id", values=col)
        table = table.reindex(index=timestamps, columns=sensor_ids)
        vals = table.to_numpy(dtype=np.float64)[:, order]      # (T, S) nearest-first
        finite = np.isfinite(vals)
        chosen = finite & (np.cumsum(finite, axis=1) <= k_nearest)
        avail = chosen.sum(axis=1)
        if (avail == 0).any():
            t = timestamps[np.argmax(avail == 0)]
            raise DataError(f"station {station.station_id}: no sensor data at {t}")
        short_rows = max(short_rows, int((avail < min(k_nearest, len(sensor_ids))).sum()))
        w = np.where(chosen, inv_w, 0.0)
        columns[var] = np.einsum("ts,ts->t", w, np.where(chosen, vals, 0.0)) / w.sum(axis=1)
    if len(sensor_ids) < k_nearest:
        warnings.warn(
            f"station {station.station_id}: only {len(sensor_ids)} sensors for K={k_nearest}",
            stacklevel=2,
        )
    elif short_rows:
        warnings.warn(
            f"station {station.station_id}: {short_rows} timestamps had fewer than "
            f"{k_nearest} reporting sensors",
            stacklevel=2,
        )
    return StationWeatherSeries(station_id=station.station_id, timestamps=timestamps,
                                temp=columns["temp"], wind=columns["wind"],
                                precip=columns["precip"])


def interpolate_stations(stations: list[StationRecord], sensors: pd.DataFrame,
                         weather: pd.DataFrame, **kwargs) -> dict[str, StationWeatherSeries]:
    return {s.station_id: idw_interpolate(s, sensors, weather, **kwargs) for s in stations}


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    if len(x) != len(y):
        raise DataError(f"series length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        return None
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        return None
    return float(xc @ yc / denom)


def edge_correlations(travel_series: np.ndarray, weather_from: StationWeatherSeries,
                      weather_to: StationWeatherSeries) -> EdgeWeatherCorrelations:
    """Correlate an edge's travel-time draw series with midpoint weather."""
    travel_series = np.asarray(travel_series, dtype=np.float64)
    values = {}
    for var in VARIABLES:
        midpoint = (weather_from.variable(var) + weather_to.variable(var)) / 2.0
        values[var] = _pearson(travel_series, midpoint)
    return EdgeWeatherCorrelations(temp=values["temp"], wind=values["wind"],
                                   precip=values["precip"])


def aligned_travel_series(mean_minutes: float, cv: float, seed: int, edge_id: int,
                          length: int) -> np.ndarray:
    """One stochastic travel-time draw per weather timestamp for an edge."""
    return lognormal_draws(mean_minutes, cv, length, seed, edge_id=edge_id,
                           stream=STREAM_WEATHER_ALIGN)


def fit_weather_weights(rows: list[tuple[EdgeWeatherCorrelations, float]]) -> WeatherWeights:
    """Cross-edge least squares of mean travel time on the three
    correlation features (plus intercept), normalized to mixing weights.

    Rows with any undefined correlation are excluded. A rank-deficient
    design (or all-zero coefficients) falls back to equal weights.
    """
    usable = [(c, t) for c, t in rows if c.defined()]
    if len(usable) < 4:
        raise DataError(f"need >= 4 edges with defined correlations, got {len(usable)}")
    X = np.column_stack([
        np.ones(len(usable)),
        np.array([c.as_array() for c, _ in usable]),
    ])
    y = np.array([t for _, t in usable])

    if np.linalg.matrix_rank(X) < X.shape[1]:
        warnings.warn("rank-deficient weather regression; using equal weights", stacklevel=2)
        return WeatherWeights(alpha_temp=1 / 3, alpha_wind=1 / 3, alpha_precip=1 / 3,
                              beta_temp=0.0, beta_wind=0.0, beta_precip=0.0,
                              intercept=float(np.mean(y)), residual_std=float(np.std(y)),
                              fallback=True)
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    intercept, betas = float(coef[0]), coef[1:]
    residual = y - X @ coef
    total = np.abs(betas).sum()
    if total == 0.0:
        warnings.warn("all-zero weather coefficients; using equal weights", stacklevel=2)
        alphas = np.full(3, 1 / 3)
        fallback = True
    else:
        alphas = np.abs(betas) / total
        fallback = False
    return WeatherWeights(
        alpha_temp=float(alphas[0]), alpha_wind=float(alphas[1]), alpha_precip=float(alphas[2]),
        beta_temp=float(betas[0]), beta_wind=float(betas[1]), beta_precip=float(betas[2]),
        intercept=intercept, residual_std=float(np.std(residual)), fallback=fallback,
    )


def adjustment_factors(matrix: TravelTimeMatrix,
                       correlations: dict[tuple[int, int], EdgeWeatherCorrelations],
                       weights: WeatherWeights) -> np.ndarray:
    """Per-edge multiplicative factor 1 + sum_k alpha_k * rho_k."""
    n = matrix.n
    factors = np.ones((n, n))
    alphas = weights.alphas
    for (i, j), corr in correlations.items():
        factors[i, j] = 1.0 + float(alphas @ corr.as_array())
    return factors


def adjust_travel_times(samples: np.ndarray, matrix: TravelTimeMatrix,
                        correlations: dict[tuple[int, int], EdgeWeatherCorrelations],
                        weights: WeatherWeights,
                        floor: float) -> np.ndarray:
    """Scale sampled travel times by weather factors, clamped at the floor."""
    if not math.isclose(float(weights.alphas.sum()), 1.0, rel_tol=0, abs_tol=1e-12):
        raise DataError("weather weights must sum to 1")
    factors = adjustment_factors(matrix, correlations, weights)
    adjusted = samples * factors                      # NaN entries propagate
    return np.maximum(adjusted, floor)


def weather_features(series: dict[str, StationWeatherSeries], station_ids: list[str],
                     timestamps: pd.DatetimeIndex) -> np.ndarray:
    """Stacked (T, n, 3) array of temp/wind/precip at flow timestamps."""
    out = np.empty((len(timestamps), len(station_ids), 3))
    for col, sid in enumerate(station_ids):
        resampled = series[sid].at(timestamps)
        out[:, col, 0] = resampled.temp
        out[:, col, 1] = resampled.wind
        out[:, col, 2] = resampled.precip
    return out
