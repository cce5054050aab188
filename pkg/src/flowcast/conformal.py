"""Conformal prediction intervals from validation residuals.

The adaptive variant recalibrates after every training epoch on that
epoch's validation residuals; the split baseline calibrates once against
the finished model. Both use the same finite-sample quantile rule, so on
identical residuals they produce identical intervals.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import DataError


def conformal_quantile(residuals: np.ndarray, alpha: float) -> float:
    """Finite-sample corrected quantile of absolute residuals.

    Returns the ceil((1 - alpha)(n + 1))-th smallest residual. When n is
    too small for that rank to exist the interval cannot guarantee
    coverage, so the quantile degenerates to +inf with a warning.
    """
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must be in (0, 1), got {alpha}")
    residuals = np.asarray(residuals, dtype=np.float64).ravel()
    n = residuals.size
    if n == 0:
        warnings.warn("no calibration residuals; intervals are unbounded")
        return float("inf")
    rank = math.ceil((1.0 - alpha) * (n + 1))
    if rank > n:
        warnings.warn(
            f"{n} calibration residuals cannot support alpha={alpha}; "
            f"need at least {math.ceil(1.0 / alpha) - 1}, intervals are unbounded")
        return float("inf")
    return float(np.sort(residuals)[rank - 1])


@dataclass(frozen=True)
class CalibrationSet:
    """Residual pool and the interval half-width it implies."""

    residuals: np.ndarray
    alpha: float
    quantile: float

    @property
    def size(self) -> int:
        return int(np.asarray(self.residuals).size)


def calibrate(residuals: np.ndarray, alpha: float) -> CalibrationSet:
    residuals = np.asarray(residuals, dtype=np.float64).ravel()
    return CalibrationSet(residuals, alpha, conformal_quantile(residuals, alpha))


def epoch_quantiles(residual_history: list[np.ndarray], alpha: float) -> list[float]:
    """Recalibrated half-width after each completed epoch."""
    return [conformal_quantile(r, alpha) for r in residual_history]


@dataclass(frozen=True)
class IntervalForecast:
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def build_intervals(points: np.ndarray, calibration: CalibrationSet) -> IntervalForecast:
    points = np.asarray(points, dtype=np.float64)
    q = calibration.quantile
    return IntervalForecast(points, points - q, points + q)


def split_cp(predict, features: np.ndarray, targets: np.ndarray,
             alpha: float) -> CalibrationSet:
    """Single-pass split conformal calibration against a finished model.

    ``predict`` maps a window batch to point forecasts of the same shape
    as ``targets``.
    """
    residuals = np.abs(np.asarray(predict(features)) - np.asarray(targets))
    return calibrate(residuals, alpha)


class ConformalCalibrator(BaseEstimator):
    """Estimator-style wrapper: fit on calibration pairs, emit intervals."""

    def __init__(self, alpha: float = 0.10):
        self.alpha = alpha

    def fit(self, y_true: np.ndarray, y_pred: np.ndarray) -> "ConformalCalibrator":
        residuals = np.abs(np.asarray(y_true, dtype=np.float64)
                           - np.asarray(y_pred, dtype=np.float64))
        self.calibration_ = calibrate(residuals, self.alpha)
        return self

    def predict_interval(self, points: np.ndarray) -> IntervalForecast:
        if not hasattr(self, "calibration_"):
            raise DataError("predict_interval() called before fit()")
        return build_intervals(points, self.calibration_)
