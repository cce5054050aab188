"""Point and interval forecast metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DataError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise DataError("cannot score empty arrays")
    return a, b


def mae(y_true, y_pred) -> float:
    t, p = _paired(y_true, y_pred)
    return float(np.mean(np.abs(p - t)))


def rmse(y_true, y_pred) -> float:
    t, p = _paired(y_true, y_pred)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def picp(y_true, lower, upper) -> float:
    """Fraction of truths inside the interval; boundary points count."""
    t, lo = _paired(y_true, lower)
    _, hi = _paired(y_true, upper)
    return float(np.mean((t >= lo) & (t <= hi)))


def mpiw(lower, upper) -> float:
    lo, hi = _paired(lower, upper)
    return float(np.mean(hi - lo))


@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    picp: float | None = None
    mpiw: float | None = None
    count: int = 0

    def to_dict(self) -> dict:
        out = {"mae": self.mae, "rmse": self.rmse, "count": self.count}
        if self.picp is not None:
            out["picp"] = self.picp
        if self.mpiw is not None:
            out["mpiw"] = self.mpiw
        return out


def score_points(y_true, y_pred) -> MetricReport:
    report = MetricReport(mae=mae(y_true, y_pred), rmse=rmse(y_true, y_pred),
                          count=int(np.asarray(y_true).size))
    assert report.mae <= report.rmse + 1e-12, "MAE exceeded RMSE"
    return report


def score_intervals(y_true, y_pred, lower, upper) -> MetricReport:
    base = score_points(y_true, y_pred)
    return MetricReport(mae=base.mae, rmse=base.rmse,
                        picp=picp(y_true, lower, upper),
                        mpiw=mpiw(lower, upper), count=base.count)


METHOD_ORDER = ("model", "model_split_cp", "ha", "saf", "ltm")
METRIC_ORDER = ("mae", "rmse", "picp", "mpiw")


def scenario_table(scenarios: list[dict]) -> tuple[dict, str]:
    """Combine per-scenario metric dicts into one report.

    Returns a JSON-serializable dict plus an aligned method-by-CV text
    table. Each scenario dict is the content of a scenario metrics file;
    at least one is required.
    """
    if not scenarios:
        raise DataError("no completed scenarios to report")
    ordered = sorted(scenarios, key=lambda s: s["cv"])
    report = {"cv_levels": [s["cv"] for s in ordered], "scenarios": ordered}

    methods = [m for m in METHOD_ORDER
               if any(m in s["methods"] for s in ordered)]
    methods += sorted(set().union(*(s["methods"] for s in ordered)) - set(methods))
    header = ["method", "metric"] + [f"cv={s['cv']:g}" for s in ordered]
    rows = [header]
    for method in methods:
        for metric in METRIC_ORDER:
            cells = []
            for s in ordered:
                entry = s["methods"].get(method, {})
                value = entry.get(metric)
                if value is not None and {"mae", "rmse"} <= entry.keys():
                    assert entry["mae"] <= entry["rmse"] + 1e-12, \
                        f"MAE exceeded RMSE for {method} at cv={s['cv']}"
                cells.append("" if value is None else f"{value:.6f}")
            if any(cells):
                rows.append([method, metric] + cells)
    widths = [max(len(row[c]) for row in rows) for c in range(len(header))]
    text = "\n".join(
        "  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip()
        for row in rows)
    return report, text
