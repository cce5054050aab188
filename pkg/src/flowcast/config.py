"""Run configuration: dataclasses plus TOML file loading.

A config file mirrors :class:`RunConfig` field-for-field; CLI flags
override file values. Unknown keys are rejected rather than ignored so
typos surface early.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError

DEFAULT_CV_LEVELS = (0.1, 0.3, 0.5, 0.7, 1.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """One Monte-Carlo travel-time scenario.

    ``cv`` is the coefficient of variation (std/mean) of link travel
    times, ``samples`` the number of sampled travel-time matrices,
    ``kernel_sigma`` the spread of the Gaussian kernel that turns
    travel times into edge weights.
    """

    cv: float
    samples: int = 50
    seed: int = 0
    kernel_sigma: float = 0.5

    def __post_init__(self):
        if not self.cv > 0:
            raise ConfigError(f"cv must be > 0, got {self.cv}")
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        if not self.kernel_sigma > 0:
            raise ConfigError(f"kernel_sigma must be > 0, got {self.kernel_sigma}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer schedule and model hyperparameters."""

    look_back: int = 96          # history window, in 15-min steps (24 h)
    horizon: int = 1             # forecast steps ahead
    heads: int = 4               # attention heads in the spatial layer
    head_dim: int = 8            # per-head output width
    hidden: int = 64             # recurrent state width
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 10
    leaky_slope: float = 0.2
    train_frac: float = 0.70
    val_frac: float = 0.15

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.look_back < self.horizon:
            raise ConfigError(
                f"look_back ({self.look_back}) must be >= horizon ({self.horizon})"
            )
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if not 0 < self.train_frac + self.val_frac < 1:
            raise ConfigError("train_frac + val_frac must lie in (0, 1)")


@dataclass
class RunConfig:
    """Everything a full scenario sweep needs."""

    data_dir: Path
    output_dir: Path = Path("runs")
    cv_levels: tuple[float, ...] = DEFAULT_CV_LEVELS
    samples: int = 50
    aggregation: str = "mean"    # "mean" or "per_sample"
    alpha: float = 0.10          # interval miscoverage
    seed: int = 0
    kernel_sigma: float = 0.5
    look_back: int = 96
    horizon: int = 1
    heads: int = 4
    head_dim: int = 8
    hidden: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 10
    min_availability: float = 0.0
    denormalized: bool = False

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)
        self.output_dir = Path(self.output_dir)
        self.cv_levels = tuple(float(c) for c in self.cv_levels)
        if self.aggregation not in ("mean", "per_sample"):
            raise ConfigError(f"aggregation must be 'mean' or 'per_sample', got {self.aggregation!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if any(cv <= 0 for cv in self.cv_levels):
            raise ConfigError(f"all cv levels must be > 0, got {self.cv_levels}")
        if not 0 <= self.min_availability <= 1:
            raise ConfigError(f"min_availability must lie in [0, 1], got {self.min_availability}")

    def scenario(self, cv: float) -> ScenarioConfig:
        return ScenarioConfig(cv=cv, samples=self.samples, seed=self.seed,
                              kernel_sigma=self.kernel_sigma)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            look_back=self.look_back, horizon=self.horizon, heads=self.heads,
            head_dim=self.head_dim, hidden=self.hidden,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=self.patience,
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["data_dir"] = str(self.data_dir)
        out["output_dir"] = str(self.output_dir)
        out["cv_levels"] = list(self.cv_levels)
        return out


_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def load_run_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Read a TOML config file and apply CLI overrides on top."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config file {path}: {exc}")
    unknown = set(raw) - _FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {sorted(unknown)}")
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    if "data_dir" not in raw:
        raise ConfigError(f"config {path} must set data_dir")
    try:
        return RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}")
