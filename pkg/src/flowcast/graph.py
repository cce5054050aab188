"""Directed station graph and per-node data-availability scores.

Continuous count stations (CCS) report year-round and get score 1;
non-continuous stations are scored by their record count relative to
the best-covered non-continuous station. Edges exist exactly where the
cleaned travel-time matrix holds a finite off-diagonal entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .ingest import StationKind, StationRecord, TravelTimeMatrix


@dataclass
class TrafficGraph:
    nodes: list[StationRecord]
    travel_time: TravelTimeMatrix
    availability: np.ndarray      # per-node score in [0, 1]

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def station_ids(self) -> list[str]:
        return [s.station_id for s in self.nodes]

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(self.edge_mask())
        return list(zip(i.tolist(), j.tolist()))

    def edge_mask(self) -> np.ndarray:
        mask = np.isfinite(self.travel_time.minutes)
        np.fill_diagonal(mask, False)
        return mask


@dataclass
class AvailabilityMatrix:
    values: np.ndarray            # (n, n), entry = score_i * score_j


def availability_score(node: StationRecord, max_nccs_count: int) -> float:
    """Score in [0, 1]: 1 for CCS, count ratio for N-CCS."""
    if node.kind is StationKind.CCS:
        return 1.0
    if max_nccs_count <= 0:
        raise DataError(
            f"station {node.station_id}: cannot score N-CCS node, no N-CCS records exist"
        )
    return node.raw_count_total / max_nccs_count


def build_graph(stations: list[StationRecord], travel_time: TravelTimeMatrix) -> TrafficGraph:
    if len(stations) < 2:
        raise DataError(f"graph needs at least 2 stations, got {len(stations)}")
    if travel_time.station_ids != [s.station_id for s in stations]:
        raise DataError("travel-time matrix station order does not match station list")
    nccs_counts = [s.raw_count_total for s in stations if s.kind is StationKind.NCCS]
    max_nccs = max(nccs_counts) if nccs_counts else 0
    scores = np.array([availability_score(s, max_nccs) for s in stations])
    return TrafficGraph(nodes=list(stations), travel_time=travel_time, availability=scores)


def availability_matrix(graph: TrafficGraph) -> AvailabilityMatrix:
    """Pairwise joint-reliability matrix: outer product of node scores."""
    a = graph.availability
    return AvailabilityMatrix(values=np.outer(a, a))


def filter_stations(graph: TrafficGraph, min_availability: float) -> TrafficGraph:
    """Drop N-CCS nodes scoring below the threshold (inclusive retain).

    CCS nodes are always kept. Incident edges of removed nodes vanish
    with them. Scores are not recomputed, so filtering is idempotent.
    """
    if not 0 <= min_availability <= 1:
        raise DataError(f"min_availability must lie in [0, 1], got {min_availability}")
    keep = [
        i for i, node in enumerate(graph.nodes)
        if node.kind is StationKind.CCS or graph.availability[i] >= min_availability
    ]
    if len(keep) < 2:
        raise DataError(
            f"filtering at threshold {min_availability} leaves {len(keep)} station(s); need >= 2"
        )
    if len(keep) == graph.n:
        return graph
    idx = np.asarray(keep)
    sub = TravelTimeMatrix(
        station_ids=[graph.nodes[i].station_id for i in keep],
        minutes=graph.travel_time.minutes[np.ix_(idx, idx)].copy(),
        flagged=graph.travel_time.flagged[np.ix_(idx, idx)].copy(),
        observations={
            (keep.index(i), keep.index(j)): obs
            for (i, j), obs in graph.travel_time.observations.items()
            if i in keep and j in keep
        },
    )
    return TrafficGraph(
        nodes=[graph.nodes[i] for i in keep],
        travel_time=sub,
        availability=graph.availability[idx].copy(),
    )
