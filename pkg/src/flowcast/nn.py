"""Forecasting network: graph attention, LSTM, temporal attention, dense head.

The network consumes windows shaped (batch, look_back, nodes, features)
together with a fixed weighted adjacency matrix and produces one flow
value per node per horizon step. All layers run on the autodiff core in
:mod:`flowcast.autodiff`; no framework is involved.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, parameter, softmax, stack
from .config import TrainConfig
from .errors import DataError, TrainingError


def init_parameters(n_features: int, config: TrainConfig,
                    rng: np.random.Generator) -> dict[str, Tensor]:
    """Create all trainable tensors in a fixed, checkpoint-stable order.

    Weights draw from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases
    start at zero.
    """
    heads, d, hidden = config.heads, config.head_dim, config.hidden
    gat_out = heads * d
    params: dict[str, Tensor] = {}
    params["gat.w"] = parameter(None, rng, fan_in=n_features, shape=(heads, 1, n_features, d))
    params["gat.a_src"] = parameter(None, rng, fan_in=d, shape=(heads, 1, d, 1))
    params["gat.a_dst"] = parameter(None, rng, fan_in=d, shape=(heads, 1, d, 1))
    for gate in ("i", "f", "g", "o"):
        params[f"lstm.w_x{gate}"] = parameter(None, rng, fan_in=gat_out, shape=(gat_out, hidden))
        params[f"lstm.w_h{gate}"] = parameter(None, rng, fan_in=hidden, shape=(hidden, hidden))
        params[f"lstm.b_{gate}"] = parameter(np.zeros(hidden))
    params["att.w"] = parameter(None, rng, fan_in=hidden, shape=(hidden, 1))
    params["att.b"] = parameter(np.zeros(1))
    params["head.w"] = parameter(None, rng, fan_in=hidden, shape=(hidden, config.horizon))
    params["head.b"] = parameter(np.zeros(config.horizon))
    return params


class ForecastModel:
    """Wires the layers together over one adjacency matrix.

    The adjacency gets a unit self-loop on the diagonal so every node
    attends at least to itself; attention weights are then confined to
    the nonzero entries of that matrix.
    """

    def __init__(self, adjacency: np.ndarray, n_features: int, config: TrainConfig,
                 params: dict[str, Tensor] | None = None,
                 rng: np.random.Generator | None = None):
        adjacency = np.asarray(adjacency, dtype=np.float64)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise DataError(f"adjacency must be square, got shape {adjacency.shape}")
        if not np.isfinite(adjacency).all():
            raise DataError("adjacency contains non-finite entries")
        if (adjacency < 0).any():
            raise DataError("adjacency contains negative entries")
        self.n_nodes = adjacency.shape[0]
        self.n_features = n_features
        self.config = config
        self.a_hat = adjacency.copy()
        np.fill_diagonal(self.a_hat, 1.0)
        self.mask = (self.a_hat > 0).astype(np.float64)
        if params is None:
            if rng is None:
                raise ValueError("need params or rng")
            params = init_parameters(n_features, config, rng)
        self.params = params

    # -- layers ----------------------------------------------------------

    def _check(self, out: Tensor, layer: str) -> Tensor:
        if not np.isfinite(out.data).all():
            raise TrainingError(f"non-finite activations after {layer} layer")
        return out

    def _graph_attention(self, x: Tensor) -> Tensor:
        """(batch, nodes, features) -> (batch, nodes, heads * head_dim)."""
        p = self.params
        slope = self.config.leaky_slope
        # (1, batch, nodes, f) @ (heads, 1, f, d) -> (heads, batch, nodes, d)
        wh = x.reshape(1, *x.shape) @ p["gat.w"]
        src = wh @ p["gat.a_src"]
        dst = wh @ p["gat.a_dst"]
        logits = (src + dst.transpose((0, 1, 3, 2))).leaky_relu(slope)
        logits = logits * self.a_hat
        attn = softmax(logits, axis=-1, mask=self.mask)
        out = (attn @ wh).elu()
        heads, d = self.config.heads, self.config.head_dim
        batch = x.shape[0]
        out = out.transpose((1, 2, 0, 3)).reshape(batch, self.n_nodes, heads * d)
        return self._check(out, "graph attention")

    def _lstm(self, seq: Tensor) -> Tensor:
        """(batch, steps, features) -> hidden states (batch, steps, hidden)."""
        p = self.params
        hidden = self.config.hidden
        batch, steps = seq.shape[0], seq.shape[1]
        seq_t = seq.transpose((1, 0, 2))
        h = Tensor(np.zeros((batch, hidden)))
        c = Tensor(np.zeros((batch, hidden)))
        states = []
        for t in range(steps):
            x_t = seq_t.select(t)
            i = (x_t @ p["lstm.w_xi"] + h @ p["lstm.w_hi"] + p["lstm.b_i"]).sigmoid()
            f = (x_t @ p["lstm.w_xf"] + h @ p["lstm.w_hf"] + p["lstm.b_f"]).sigmoid()
            g = (x_t @ p["lstm.w_xg"] + h @ p["lstm.w_hg"] + p["lstm.b_g"]).tanh()
            o = (x_t @ p["lstm.w_xo"] + h @ p["lstm.w_ho"] + p["lstm.b_o"]).sigmoid()
            c = f * c + i * g
            h = o * c.tanh()
            states.append(h)
        out = stack(states).transpose((1, 0, 2))
        return self._check(out, "lstm")

    def _temporal_attention(self, states: Tensor) -> Tensor:
        """(batch, steps, hidden) -> attention-pooled context (batch, hidden)."""
        p = self.params
        scores = (states @ p["att.w"] + p["att.b"]).tanh()
        weights = softmax(scores, axis=1)
        context = (states * weights).sum(axis=1)
        return self._check(context, "temporal attention")

    def _dense(self, context: Tensor) -> Tensor:
        p = self.params
        out = context @ p["head.w"] + p["head.b"]
        return self._check(out, "dense")

    # -- forward ----------------------------------------------------------

    def forward(self, windows: np.ndarray) -> Tensor:
        """(batch, look_back, nodes, features) -> (batch, nodes, horizon)."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 4 or windows.shape[2] != self.n_nodes \
                or windows.shape[3] != self.n_features:
            raise DataError(
                f"window batch must be (batch, steps, {self.n_nodes}, "
                f"{self.n_features}), got {windows.shape}")
        batch, steps = windows.shape[0], windows.shape[1]
        flat = Tensor(windows.reshape(batch * steps, self.n_nodes, self.n_features))
        spatial = self._graph_attention(flat)
        feat = self.config.heads * self.config.head_dim
        seq = spatial.reshape(batch, steps, self.n_nodes, feat) \
            .transpose((0, 2, 1, 3)) \
            .reshape(batch * self.n_nodes, steps, feat)
        states = self._lstm(seq)
        context = self._temporal_attention(states)
        out = self._dense(context)
        return out.reshape(batch, self.n_nodes, self.config.horizon)

    def predict(self, windows: np.ndarray) -> np.ndarray:
        return self.forward(windows).data

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target array."""
    diff = pred - np.asarray(target, dtype=np.float64)
    return (diff * diff).mean()
