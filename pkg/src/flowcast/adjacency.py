"""Turn adjusted travel times into edge weights and merge reliability.

A Gaussian kernel over travel times normalized by the matrix maximum
gives dynamic connectivity in (0, 1]; multiplying by the pairwise
availability matrix yields the adaptive adjacency the spatial layer
consumes. Entries are 0 where no edge exists.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .errors import DataError
from .graph import AvailabilityMatrix


@dataclass
class AdaptiveAdjacency:
    """Dense nonnegative edge-weight matrix in [0, 1].

    ``sample_index`` is None for an aggregate (mean over samples).
    """

    values: np.ndarray
    station_ids: list[str]
    scenario: ScenarioConfig | None = None
    sample_index: int | None = None

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def write_csv(self, path: str | Path) -> None:
        """Dump as from_id,to_id,weight triples (edges only)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["from_id", "to_id", "weight"])
            for i, j in zip(*np.nonzero(self.values)):
                writer.writerow([self.station_ids[i], self.station_ids[j],
                                 repr(float(self.values[i, j]))])


def gaussian_kernel(adjusted: np.ndarray, sigma: float) -> np.ndarray:
    """Kernelized edge weights exp(-(t/t_max)^2 / (2 sigma^2)).

    ``adjusted`` holds positive travel times on edges and NaN elsewhere;
    the output holds weights in (0, 1] on edges and exactly 0 elsewhere.
    Scaling all travel times by a positive constant leaves the result
    unchanged because t_max rescales with them.
    """
    if not sigma > 0:
        raise DataError(f"kernel sigma must be > 0, got {sigma}")
    adjusted = np.asarray(adjusted, dtype=np.float64)
    present = np.isfinite(adjusted)
    np.fill_diagonal(present, False)
    if not present.any():
        raise DataError("no edges: adjusted travel-time matrix is empty")
    if (adjusted[present] <= 0).any():
        raise DataError("adjusted travel times must be > 0 on all edges")
    t_max = adjusted[present].max()
    out = np.zeros_like(adjusted)
    ratio = adjusted[present] / t_max
    out[present] = np.exp(-(ratio ** 2) / (2.0 * sigma * sigma))
    return out


def merge_availability(dynamic: np.ndarray, availability: AvailabilityMatrix,
                       station_ids: list[str],
                       scenario: ScenarioConfig | None = None,
                       sample_index: int | None = None) -> AdaptiveAdjacency:
    """Element-wise product of dynamic connectivity and joint reliability."""
    if dynamic.shape != availability.values.shape:
        raise DataError(
            f"shape mismatch: dynamic {dynamic.shape} vs availability {availability.values.shape}"
        )
    return AdaptiveAdjacency(values=dynamic * availability.values,
                             station_ids=list(station_ids),
                             scenario=scenario, sample_index=sample_index)


def aggregate_samples(adjacencies: list[AdaptiveAdjacency],
                      mode: str = "mean") -> AdaptiveAdjacency | list[AdaptiveAdjacency]:
    """Combine per-sample adjacencies: element-wise mean, or pass through."""
    if not adjacencies:
        raise DataError("need at least one adjacency to aggregate")
    if mode == "per_sample":
        return adjacencies
    if mode != "mean":
        raise DataError(f"unknown aggregation mode {mode!r}")
    stacked = np.stack([a.values for a in adjacencies])
    return AdaptiveAdjacency(values=stacked.mean(axis=0),
                             station_ids=list(adjacencies[0].station_ids),
                             scenario=adjacencies[0].scenario, sample_index=None)


def build_adjacencies(adjusted_samples: np.ndarray, availability: AvailabilityMatrix,
                      station_ids: list[str], scenario: ScenarioConfig,
                      mode: str = "mean") -> AdaptiveAdjacency | list[AdaptiveAdjacency]:
    """Kernel + merge for every sampled matrix, then aggregate."""
    per_sample = [
        merge_availability(gaussian_kernel(adjusted_samples[m], scenario.kernel_sigma),
                           availability, station_ids, scenario, m)
        for m in range(adjusted_samples.shape[0])
    ]
    return aggregate_samples(per_sample, mode)
