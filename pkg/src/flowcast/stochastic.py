"""Stochastic travel-time sampling and distribution-fit testing.

Link travel times are modeled log-normally, parameterized by the mean
travel time and a coefficient of variation (CV = std/mean). Draws come
from a counter-based generator (Philox) keyed per (seed, edge), with
draw ``m`` read off the stream's ``m``-th fixed counter position via
the inverse normal CDF, so results are identical regardless of the
order edges or samples are evaluated in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov, ndtri

from .config import ScenarioConfig
from .errors import DataError
from .ingest import TravelTimeMatrix

# Distinct stream purposes share one seed without colliding.
STREAM_SCENARIO = 0
STREAM_WEATHER_ALIGN = 1

_MIN_UNIFORM = 2.0 ** -53   # smallest value random() can exceed 0 by
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class LogNormalParams:
    mu_ln: float
    sigma_ln: float

    @property
    def mean(self) -> float:
        return math.exp(self.mu_ln + self.sigma_ln ** 2 / 2)

    @property
    def cv(self) -> float:
        return math.sqrt(math.exp(self.sigma_ln ** 2) - 1)


def lognormal_params(mean_minutes: float, cv: float) -> LogNormalParams:
    """Log-normal parameters with exact mean ``mean_minutes`` and CV ``cv``."""
    if not mean_minutes > 0:
        raise DataError(f"mean travel time must be > 0, got {mean_minutes}")
    if not cv > 0:
        raise DataError(f"cv must be > 0, got {cv}")
    sigma_ln = math.sqrt(math.log(cv * cv + 1.0))
    mu_ln = math.log(mean_minutes) - sigma_ln ** 2 / 2
    return LogNormalParams(mu_ln=mu_ln, sigma_ln=sigma_ln)


def _edge_uniforms(seed: int, edge_id: int, count: int, stream: int) -> np.ndarray:
    """Fixed-position uniforms in (0, 1) for one edge's stream."""
    key = np.array([seed & _MASK64, ((stream & 0xFFFF) << 48) | (edge_id & ((1 << 48) - 1))],
                   dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return np.maximum(gen.random(count), _MIN_UNIFORM)


def lognormal_draws(mean_minutes: float, cv: float, count: int, seed: int,
                    edge_id: int = 0, stream: int = STREAM_SCENARIO) -> np.ndarray:
    """``count`` independent log-normal draws for one edge."""
    params = lognormal_params(mean_minutes, cv)
    z = ndtri(_edge_uniforms(seed, edge_id, count, stream))
    return np.exp(params.mu_ln + params.sigma_ln * z)


def sample_travel_times(mean_matrix: TravelTimeMatrix,
                        config: ScenarioConfig) -> np.ndarray:
    """Sampled travel-time matrices, shape (samples, n, n).

    Every present entry is drawn from the log-normal matched to that
    link's mean and the scenario CV; absent entries stay NaN. Identical
    config (cv, samples, seed) reproduces identical output bit-for-bit.
    """
    n = mean_matrix.n
    present = mean_matrix.present_mask()
    if mean_matrix.flagged.any():
        raise DataError("travel-time matrix must be cleaned before sampling")
    out = np.full((config.samples, n, n), np.nan)
    sigma_ln = math.sqrt(math.log(config.cv ** 2 + 1.0))
    for i, j in zip(*np.nonzero(present)):
        mean = mean_matrix.minutes[i, j]
        mu_ln = math.log(mean) - sigma_ln ** 2 / 2
        z = ndtri(_edge_uniforms(config.seed, int(i) * n + int(j), config.samples,
                                 STREAM_SCENARIO))
        out[:, i, j] = np.exp(mu_ln + sigma_ln * z)
    return out


def _moment_fit(samples: np.ndarray, family: str):
    """Fit a distribution by moment matching; return its CDF callable.

    A zero-variance sample cannot pin down a continuous member, so the
    fit falls back to unit dispersion anchored at the sample value
    (keeping the statistic well-defined and >= 0.5 for constant data).
    """
    m = float(np.mean(samples))
    s = float(np.std(samples, ddof=1))
    from scipy import stats

    if family == "normal":
        scale = s if s > 0 else 1.0
        return stats.norm(loc=m, scale=scale).cdf
    if family == "lognormal":
        if np.any(samples <= 0):
            raise DataError("lognormal family requires strictly positive samples")
        if s > 0:
            cv = s / m
            sigma_ln = math.sqrt(math.log(cv * cv + 1.0))
            mu_ln = math.log(m) - sigma_ln ** 2 / 2
        else:
            sigma_ln, mu_ln = 1.0, math.log(m)
        return stats.lognorm(s=sigma_ln, scale=math.exp(mu_ln)).cdf
    if family == "gamma":
        if np.any(samples <= 0):
            raise DataError("gamma family requires strictly positive samples")
        if s > 0:
            shape = (m / s) ** 2
            scale = s * s / m
        else:
            shape, scale = 1.0, m
        return stats.gamma(a=shape, scale=scale).cdf
    raise DataError(f"unknown family {family!r}; expected lognormal, normal, or gamma")


def ks_test(samples, family: str) -> tuple[float, float]:
    """Two-sided one-sample KS statistic against the moment-matched fit.

    Returns (statistic, p) with the p-value from the asymptotic
    Kolmogorov distribution; needs at least 20 samples for the
    asymptotic formula to be meaningful.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.size
    if n < 20:
        raise DataError(f"ks_test needs >= 20 samples, got {n}")
    cdf = _moment_fit(samples, family)
    x = np.sort(samples)
    f = cdf(x)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    statistic = float(max(d_plus, d_minus))
    p_value = float(kolmogorov(statistic * math.sqrt(n)))
    return statistic, p_value
