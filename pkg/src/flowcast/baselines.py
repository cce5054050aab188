"""Historical-average and physics baselines for node flow forecasting.

The two physics models share proxy turning ratios derived from the
travel-time matrix and per-station capacities taken from the 99th
percentile of training counts. Both are driven by observed flows lagged
one step, so like the network they only see information available before
the step being predicted. Their per-station prediction is simulated
throughflow: vehicles served at the station during the step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from .errors import DataError
from .ingest import FLOW_CADENCE_MINUTES, lower_median

DEFAULT_TOP_K = 3


# -- historical average ------------------------------------------------------


class HistoricalAverage(BaseEstimator):
    """Bucketed mean flow: (time-of-day, day-of-week) with fallbacks.

    An empty bucket falls back to the time-of-day bucket, then to the
    per-station global mean over the training data.
    """

    def fit(self, timestamps: pd.DatetimeIndex, values: np.ndarray,
            valid: np.ndarray | None = None) -> "HistoricalAverage":
        values = np.asarray(values, dtype=np.float64)
        if len(timestamps) != len(values):
            raise DataError("timestamps and values disagree on length")
        if valid is None:
            valid = np.ones(values.shape, dtype=bool)
        mask = np.asarray(valid, dtype=bool)
        n = values.shape[1]
        slots = self._slots(timestamps)
        days = np.asarray(timestamps.dayofweek)
        self.n_stations_ = n
        self.slot_day_ = {}
        self.slot_ = {}
        for slot in np.unique(slots):
            in_slot = slots == slot
            self.slot_[int(slot)] = self._masked_mean(values[in_slot], mask[in_slot])
            for day in np.unique(days[in_slot]):
                rows = in_slot & (days == day)
                self.slot_day_[(int(slot), int(day))] = \
                    self._masked_mean(values[rows], mask[rows])
        counts = mask.sum(axis=0)
        if (counts == 0).any():
            raise DataError("a station has no valid training flows")
        sums = np.where(mask, values, 0.0).sum(axis=0)
        self.global_ = sums / counts
        return self

    @staticmethod
    def _slots(timestamps: pd.DatetimeIndex) -> np.ndarray:
        minutes = np.asarray(timestamps.hour) * 60 + np.asarray(timestamps.minute)
        return minutes // FLOW_CADENCE_MINUTES

    @staticmethod
    def _masked_mean(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
        counts = mask.sum(axis=0)
        sums = np.where(mask, values, 0.0).sum(axis=0)
        out = np.full(values.shape[1], np.nan)
        nonzero = counts > 0
        out[nonzero] = sums[nonzero] / counts[nonzero]
        return out

    def predict(self, timestamps: pd.DatetimeIndex) -> np.ndarray:
        if not hasattr(self, "global_"):
            raise DataError("predict() called before fit()")
        slots = self._slots(timestamps)
        days = np.asarray(timestamps.dayofweek)
        out = np.empty((len(timestamps), self.n_stations_))
        for row, (slot, day) in enumerate(zip(slots, days)):
            best = self.slot_day_.get((int(slot), int(day)))
            fallback = self.slot_.get(int(slot))
            pred = self.global_.copy()
            if fallback is not None:
                hit = ~np.isnan(fallback)
                pred[hit] = fallback[hit]
            if best is not None:
                hit = ~np.isnan(best)
                pred[hit] = best[hit]
            out[row] = pred
        return out


# -- turning ratios -----------------------------------------------------------


@dataclass(frozen=True)
class TurningRatioTable:
    """Row-stochastic routing over each node's top-k fastest neighbors.

    A node with no outgoing edges gets an all-zero row: it absorbs, and
    anything it serves exits the network.
    """

    ratios: np.ndarray
    tau: float
    k: int

    def __post_init__(self):
        rows = np.asarray(self.ratios)
        if (rows < 0).any():
            raise DataError("turning ratios must be nonnegative")
        sums = rows.sum(axis=1)
        bad = ~((np.abs(sums - 1.0) <= 1e-12) | (sums == 0))
        if bad.any():
            raise DataError("turning-ratio rows must sum to 1 or be absorbing")

    @property
    def absorbing(self) -> np.ndarray:
        return np.asarray(self.ratios).sum(axis=1) == 0


def default_tau(travel_minutes: np.ndarray) -> float:
    """Median finite off-diagonal travel time (lower median on ties)."""
    t = np.asarray(travel_minutes, dtype=np.float64)
    off = ~np.eye(t.shape[0], dtype=bool)
    pool = t[off & np.isfinite(t)]
    if pool.size == 0:
        raise DataError("no finite travel times to derive an impedance scale")
    return lower_median(pool.tolist())


def turning_ratios(travel_minutes: np.ndarray, tau: float | None = None,
                   k: int = DEFAULT_TOP_K) -> TurningRatioTable:
    """Exponential-impedance split over each node's k fastest neighbors."""
    t = np.asarray(travel_minutes, dtype=np.float64)
    if tau is None:
        tau = default_tau(t)
    if tau <= 0:
        raise DataError(f"impedance scale tau must be positive, got {tau}")
    if k < 1:
        raise DataError(f"top-k must be at least 1, got {k}")
    n = t.shape[0]
    ratios = np.zeros((n, n))
    for i in range(n):
        times = t[i].copy()
        times[i] = np.nan
        neighbors = np.nonzero(np.isfinite(times))[0]
        if neighbors.size == 0:
            warnings.warn(f"node {i} has no outgoing edges; treating as absorbing")
            continue
        fastest = neighbors[np.argsort(times[neighbors], kind="stable")][:k]
        weights = np.exp(-times[fastest] / tau)
        ratios[i, fastest] = weights / weights.sum()
    return TurningRatioTable(ratios, float(tau), int(k))


# -- store and forward ---------------------------------------------------------


@dataclass
class LinkQueueState:
    """Queues plus cumulative accounting; arithmetic dtype is the caller's.

    Passing exact types (int, Fraction) keeps the conservation ledger
    exact; floats give the usual approximate ledger.
    """

    queues: np.ndarray
    capacities: np.ndarray
    inflow_total: np.ndarray
    outflow_total: np.ndarray
    exited_total: object

    @classmethod
    def initial(cls, capacities, zero=0.0) -> "LinkQueueState":
        capacities = np.asarray(capacities)
        n = capacities.shape[0]
        zeros = np.array([zero] * n)
        return cls(zeros.copy(), capacities, zeros.copy(), zeros.copy(), zero)

    @property
    def injected_total(self):
        return self.inflow_total.sum()


def saf_step(state: LinkQueueState, ratios: TurningRatioTable,
             demand: np.ndarray) -> tuple[LinkQueueState, np.ndarray]:
    """Advance the link-queue network one step; returns served outflow.

    Served flow is min(queue + demand, capacity). It splits downstream
    by the turning ratios and lands in those queues within the step;
    the unrouted remainder at absorbing nodes exits the network.
    """
    demand = np.asarray(demand)
    if (np.asarray([float(d) for d in demand]) < 0).any():
        raise DataError("demand must be nonnegative")
    r = np.asarray(ratios.ratios)
    loaded = state.queues + demand
    outflow = np.minimum(loaded, state.capacities)
    routed_out = r.sum(axis=1) * outflow
    arrivals = (r * outflow[:, None]).sum(axis=0)
    next_state = LinkQueueState(
        queues=loaded - outflow + arrivals,
        capacities=state.capacities,
        inflow_total=state.inflow_total + demand,
        outflow_total=state.outflow_total + outflow,
        exited_total=state.exited_total + (outflow - routed_out).sum(),
    )
    return next_state, outflow


def saf_predict(demand_series: np.ndarray, ratios: TurningRatioTable,
                capacities: np.ndarray) -> tuple[np.ndarray, LinkQueueState]:
    """Run the simulator over a demand series; predictions are outflows."""
    demand_series = np.asarray(demand_series, dtype=np.float64)
    state = LinkQueueState.initial(np.asarray(capacities, dtype=np.float64))
    out = np.empty_like(demand_series)
    for t in range(demand_series.shape[0]):
        state, out[t] = saf_step(state, ratios, demand_series[t])
    return out, state


# -- link transmission -----------------------------------------------------------


def free_flow_delays(travel_minutes: np.ndarray,
                     step_minutes: float = FLOW_CADENCE_MINUTES) -> np.ndarray:
    """Edge travel times rounded to whole steps, at least 1; 0 = no edge."""
    t = np.asarray(travel_minutes, dtype=np.float64)
    delays = np.zeros(t.shape, dtype=int)
    edge = np.isfinite(t) & ~np.eye(t.shape[0], dtype=bool)
    delays[edge] = np.maximum(1, np.rint(t[edge] / step_minutes).astype(int))
    return delays


def ltm_predict(demand_series: np.ndarray, travel_minutes: np.ndarray,
                ratios: TurningRatioTable, capacities: np.ndarray) -> np.ndarray:
    """Cumulative-count propagation with free-flow delays and capacity caps.

    Each station's cumulative arrivals are its own cumulative demand plus
    upstream cumulative departures shifted by the link delay and scaled
    by the turning ratio. Departures chase arrivals at up to capacity per
    step; predictions are the per-step differences of departures.
    """
    demand_series = np.asarray(demand_series, dtype=np.float64)
    horizon, n = demand_series.shape
    delays = free_flow_delays(travel_minutes)
    r = np.asarray(ratios.ratios)
    capacities = np.asarray(capacities, dtype=np.float64)
    lagging = (r > 0) & (delays >= horizon)
    if lagging.any():
        edges = np.argwhere(lagging)
        names = ", ".join(f"{i}->{j}" for i, j in edges[:5])
        warnings.warn(f"{len(edges)} link delay(s) exceed the {horizon}-step "
                      f"window ({names}); those links contribute nothing")
    served_cum = np.zeros((horizon, n))
    served_prev = np.zeros(n)
    demand_cum = np.cumsum(demand_series, axis=0)
    out = np.empty((horizon, n))
    for t in range(horizon):
        arrivals = demand_cum[t].copy()
        for i, j in np.argwhere(r > 0):
            lag = t - delays[i, j]
            if lag >= 0:
                arrivals[j] += r[i, j] * served_cum[lag, i]
        served = np.minimum(arrivals, served_prev + capacities)
        served_cum[t] = served
        out[t] = served - served_prev
        served_prev = served
    return out


def capacities_from_training(train_values: np.ndarray,
                             valid: np.ndarray | None = None) -> np.ndarray:
    """Per-station service capacity: 99th percentile of training counts."""
    train_values = np.asarray(train_values, dtype=np.float64)
    if train_values.size == 0:
        raise DataError("no training flows to derive capacities from")
    if valid is None:
        valid = np.ones(train_values.shape, dtype=bool)
    caps = np.empty(train_values.shape[1])
    for i in range(train_values.shape[1]):
        pool = train_values[np.asarray(valid)[:, i], i]
        if pool.size == 0:
            raise DataError(f"station column {i} has no valid training flows")
        caps[i] = np.percentile(pool, 99)
    return np.maximum(caps, 1e-9)
