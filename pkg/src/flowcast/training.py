"""Window assembly, model training, and checkpoint serialization."""

from __future__ import annotations

import dataclasses
import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .autodiff import Tensor
from .config import TrainConfig
from .errors import DataError, TrainingError
from .ingest import NormalizationParams
from .nn import ForecastModel, mse_loss

CHECKPOINT_MAGIC = b"FCCKPT01"


# -- window assembly -----------------------------------------------------


@dataclass(frozen=True)
class WindowSet:
    """Chronologically ordered supervised windows with a fixed split."""

    features: np.ndarray      # (windows, look_back, nodes, channels)
    targets: np.ndarray       # (windows, nodes, horizon)
    target_steps: np.ndarray  # (windows,) index of each first target step
    look_back: int
    horizon: int
    train_count: int
    val_count: int

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def test_count(self) -> int:
        return len(self) - self.train_count - self.val_count

    @property
    def train_slice(self) -> slice:
        return slice(0, self.train_count)

    @property
    def val_slice(self) -> slice:
        return slice(self.train_count, self.train_count + self.val_count)

    @property
    def test_slice(self) -> slice:
        return slice(self.train_count + self.val_count, len(self))


def usable_target_steps(valid: np.ndarray, look_back: int, horizon: int) -> np.ndarray:
    """Target indices whose look-back and horizon touch no invalid step."""
    ok = np.asarray(valid, dtype=bool).all(axis=1)
    span = look_back + horizon
    if ok.shape[0] < span:
        return np.empty(0, dtype=int)
    clean = np.lib.stride_tricks.sliding_window_view(ok, span).all(axis=1)
    return np.nonzero(clean)[0] + look_back


def split_counts(n_windows: int, train_frac: float, val_frac: float) -> tuple[int, int]:
    """Window counts for the chronological train and validation blocks."""
    train_count = int(np.floor(n_windows * train_frac))
    val_count = int(np.floor(n_windows * val_frac))
    test_count = n_windows - train_count - val_count
    if min(train_count, val_count, test_count) < 1:
        raise DataError(
            f"{n_windows} usable windows cannot cover a "
            f"{train_frac:.0%}/{val_frac:.0%} train/validation split")
    return train_count, val_count


def training_boundary(target_steps: np.ndarray, train_count: int, horizon: int) -> int:
    """First step index the training block never sees."""
    return int(target_steps[train_count - 1]) + horizon


class WeatherScaler:
    """Min-max scaler for the (time, station, channel) weather features.

    Fit on rows before the training boundary; constant channels map to
    zero so they contribute no signal. Serializable so prediction from a
    checkpoint scales features exactly as training did.
    """

    def fit(self, features: np.ndarray, boundary: int) -> "WeatherScaler":
        train = np.asarray(features, dtype=np.float64)[:boundary]
        train = train.reshape(-1, train.shape[-1])
        self.lo_ = train.min(axis=0)
        self.span_ = train.max(axis=0) - self.lo_
        return self

    def transform(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        out = np.zeros_like(features)
        nonzero = self.span_ > 0
        out[..., nonzero] = (features[..., nonzero] - self.lo_[nonzero]) \
            / self.span_[nonzero]
        return out

    def to_dict(self) -> dict:
        return {"lo": self.lo_.tolist(), "span": self.span_.tolist()}

    @classmethod
    def from_dict(cls, raw: dict) -> "WeatherScaler":
        inst = cls()
        inst.lo_ = np.asarray(raw["lo"], dtype=np.float64)
        inst.span_ = np.asarray(raw["span"], dtype=np.float64)
        return inst


def scale_weather(features: np.ndarray, boundary: int) -> np.ndarray:
    """One-shot fit-and-transform convenience over :class:`WeatherScaler`."""
    return WeatherScaler().fit(features, boundary).transform(features)


def assemble_windows(flows_norm: np.ndarray, weather_scaled: np.ndarray,
                     target_steps: np.ndarray, look_back: int, horizon: int,
                     train_count: int, val_count: int) -> WindowSet:
    """Stack flow and weather channels into model-ready window tensors."""
    channels = np.concatenate([flows_norm[..., None], weather_scaled], axis=-1)
    n_windows = len(target_steps)
    n_nodes = flows_norm.shape[1]
    features = np.empty((n_windows, look_back, n_nodes, channels.shape[-1]))
    targets = np.empty((n_windows, n_nodes, horizon))
    for i, t in enumerate(target_steps):
        features[i] = channels[t - look_back:t]
        targets[i] = flows_norm[t:t + horizon].T
    return WindowSet(features, targets, np.asarray(target_steps, dtype=int),
                     look_back, horizon, train_count, val_count)


# -- optimizer -------------------------------------------------------------


class Adam:
    """Adam with bias correction over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad ** 2
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- training loop ----------------------------------------------------------


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    """Epoch records plus per-epoch validation residuals for calibration."""

    stats: list[EpochStats] = field(default_factory=list)
    residual_history: list[np.ndarray] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    diverged: bool = False

    @property
    def final_residuals(self) -> np.ndarray:
        return self.residual_history[self.best_epoch]


def predict_batches(model: ForecastModel, features: np.ndarray,
                    batch_size: int) -> np.ndarray:
    chunks = [model.predict(features[i:i + batch_size])
              for i in range(0, len(features), batch_size)]
    return np.concatenate(chunks, axis=0)


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def _restore(params: dict[str, Tensor], snapshot: dict[str, np.ndarray]) -> None:
    for k, v in params.items():
        v.data = snapshot[k].copy()
        v.grad = None


def train_model(model: ForecastModel, windows: WindowSet, config: TrainConfig,
                seed: int = 0) -> TrainResult:
    """Minimize MSE with Adam; early-stop on validation loss.

    A non-finite loss aborts the epoch and rolls the weights back to the
    best completed epoch. Divergence before any epoch completes is fatal.
    """
    rng = np.random.default_rng(seed)
    optimizer = Adam(model.params, lr=config.learning_rate)
    train_x = windows.features[windows.train_slice]
    train_y = windows.targets[windows.train_slice]
    val_x = windows.features[windows.val_slice]
    val_y = windows.targets[windows.val_slice]
    result = TrainResult()
    best_val = np.inf
    best_params = _snapshot(model.params)
    bad_epochs = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_x))
        total = 0.0
        try:
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                model.zero_grad()
                loss = mse_loss(model.forward(train_x[idx]), train_y[idx])
                if not np.isfinite(loss.data):
                    raise TrainingError("training loss became non-finite")
                loss.backward()
                optimizer.step()
                total += float(loss.data) * len(idx)
        except TrainingError as exc:
            result.diverged = True
            if result.best_epoch < 0:
                raise TrainingError(
                    f"training diverged before completing an epoch: {exc}") from exc
            warnings.warn(f"training diverged at epoch {epoch}; "
                          f"keeping epoch {result.best_epoch} weights")
            break
        train_loss = total / len(train_x)
        val_pred = predict_batches(model, val_x, config.batch_size)
        val_loss = float(np.mean((val_pred - val_y) ** 2))
        result.stats.append(EpochStats(epoch, train_loss, val_loss))
        result.residual_history.append(np.abs(val_pred - val_y).ravel())
        if val_loss < best_val:
            best_val = val_loss
            result.best_epoch = epoch
            best_params = _snapshot(model.params)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                result.stopped_early = True
                break
    _restore(model.params, best_params)
    return result


# -- estimator --------------------------------------------------------------


class GraphFlowForecaster(BaseEstimator):
    """Forecaster with a scikit-learn style fit/predict surface.

    ``fit`` expects windows shaped (n, look_back, nodes, channels) and
    targets shaped (n, nodes, horizon), already in chronological order;
    it carves the train and validation blocks off the front internally.
    """

    def __init__(self, adjacency=None, heads: int = 4, head_dim: int = 8,
                 hidden: int = 64, learning_rate: float = 1e-3,
                 batch_size: int = 32, max_epochs: int = 20, patience: int = 10,
                 leaky_slope: float = 0.2, train_frac: float = 0.70,
                 val_frac: float = 0.15, seed: int = 0):
        self.adjacency = adjacency
        self.heads = heads
        self.head_dim = head_dim
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.leaky_slope = leaky_slope
        self.train_frac = train_frac
        self.val_frac = val_frac
        self.seed = seed

    def _config(self, look_back: int, horizon: int) -> TrainConfig:
        return TrainConfig(
            look_back=look_back, horizon=horizon, heads=self.heads,
            head_dim=self.head_dim, hidden=self.hidden,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=self.patience,
            leaky_slope=self.leaky_slope, train_frac=self.train_frac,
            val_frac=self.val_frac)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GraphFlowForecaster":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 4:
            raise DataError(f"expected 4-d window tensor, got shape {X.shape}")
        if y.ndim == 2:
            y = y[..., None]
        config = self._config(look_back=X.shape[1], horizon=y.shape[2])
        train_count, val_count = split_counts(len(X), self.train_frac, self.val_frac)
        windows = WindowSet(X, y, np.arange(len(X)), config.look_back,
                            config.horizon, train_count, val_count)
        rng = np.random.default_rng(self.seed)
        self.model_ = ForecastModel(self.adjacency, X.shape[3], config, rng=rng)
        self.result_ = train_model(self.model_, windows, config, seed=self.seed)
        self.windows_ = windows
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise TrainingError("predict() called before fit()")
        return predict_batches(self.model_, np.asarray(X, dtype=np.float64),
                               self.batch_size)


# -- checkpoint io ------------------------------------------------------------


@dataclass(frozen=True)
class Checkpoint:
    params: dict[str, Tensor]
    config: TrainConfig
    normalization: NormalizationParams
    adjacency: np.ndarray
    station_ids: tuple[str, ...]
    meta: dict

    def model(self) -> ForecastModel:
        n_features = int(self.params["gat.w"].data.shape[2])
        return ForecastModel(self.adjacency, n_features, self.config,
                             params=self.params)


def save_checkpoint(path, params: dict[str, Tensor], config: TrainConfig,
                    normalization: NormalizationParams, adjacency: np.ndarray,
                    station_ids, meta: dict | None = None) -> None:
    """Write magic, a JSON header, then raw little-endian float64 arrays."""
    arrays = [("adjacency", np.asarray(adjacency, dtype=np.float64))]
    arrays += [(f"param:{name}", tensor.data) for name, tensor in params.items()]
    header = {
        "version": 1,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
        "config": dataclasses.asdict(config),
        "normalization": normalization.to_dict(),
        "station_ids": list(station_ids),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"{path} is truncated")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    params = {name[len("param:"):]: Tensor(a, requires_grad=True)
              for name, a in arrays.items() if name.startswith("param:")}
    return Checkpoint(
        params=params,
        config=TrainConfig(**header["config"]),
        normalization=NormalizationParams.from_dict(header["normalization"]),
        adjacency=arrays["adjacency"],
        station_ids=tuple(header["station_ids"]),
        meta=header["meta"],
    )
