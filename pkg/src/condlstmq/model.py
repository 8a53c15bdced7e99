"""The conditional quantile LSTM and its tiled-static-input baseline.

Static per-county features enter through a dense layer whose (tanh-squashed,
dropout-regularized) output becomes the LSTM's initial hidden state; the cell
state starts at zero unless ``condition_cell_state`` is set.  After the
recurrence over the history window, nine parallel affine heads each emit the
full multi-day forecast for one quantile.  The baseline model instead tiles
the static features onto every timestep of the time-series input and starts
from zero states, with the identical recurrence and head structure.

All forward functions are batched: ``history`` is ``[batch, time, features]``
and ``categorical`` is ``[batch, features]``.  Heads emit standardized values;
destandardization happens in evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .autodiff import Graph, ShapeError, Tensor

KIND_COND = "condlstm-q"
KIND_PSEUDO = "pseudo-categorical"

# packed gate layout in the 4*hidden pre-activation: input, forget, candidate, output
GATE_ORDER = ("i", "f", "g", "o")


@dataclass
class ModelConfig:
    """Hyperparameters; defaults are the tuned production values."""

    hidden_units: int = 128
    learning_rate: float = 0.001
    dropout_rate: float = 0.2
    epochs: int = 20
    history_len: int = 7
    horizon: int = 14
    n_quantiles: int = 9
    n_ts_features: int = 8
    n_cat_features: int = 50
    seed: int = 0
    batch_size: int = 256
    condition_cell_state: bool = False
    sort_quantiles: bool = False
    clip_norm: float = 0.0  # 0 disables gradient clipping

    def __post_init__(self):
        if self.hidden_units <= 0:
            raise ValueError("hidden_units must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.history_len < 1 or self.horizon < 1:
            raise ValueError("history_len and horizon must be at least 1")
        if self.n_quantiles != 9:
            raise ValueError("the model emits exactly 9 quantile outputs")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.n_ts_features < 1 or self.n_cat_features < 1:
            raise ValueError("feature counts must be positive")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_updates(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


@dataclass
class ModelParams:
    """Named trainable arrays, in a fixed order shared by Adam and checkpoints."""

    kind: str
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(self.kind, {k: v.copy() for k, v in self.arrays.items()})

    def names(self) -> list[str]:
        return list(self.arrays)

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())


def input_width(config: ModelConfig, kind: str) -> int:
    """Per-timestep LSTM input width; the baseline sees statics on every step."""
    if kind == KIND_COND:
        return config.n_ts_features
    if kind == KIND_PSEUDO:
        return config.n_ts_features + config.n_cat_features
    raise ValueError(f"unknown model kind {kind!r}")


def expected_shapes(config: ModelConfig, kind: str) -> dict[str, tuple[int, ...]]:
    h = config.hidden_units
    shapes: dict[str, tuple[int, ...]] = {}
    if kind == KIND_COND:
        shapes["cond_W"] = (config.n_cat_features, h)
        shapes["cond_b"] = (h,)
        if config.condition_cell_state:
            shapes["cond_cW"] = (config.n_cat_features, h)
            shapes["cond_cb"] = (h,)
    shapes["lstm_Wx"] = (input_width(config, kind), 4 * h)
    shapes["lstm_Wh"] = (h, 4 * h)
    shapes["lstm_b"] = (4 * h,)
    for k in range(1, 10):
        shapes[f"head_W_{k}"] = (h, config.horizon)
        shapes[f"head_b_{k}"] = (config.horizon,)
    return shapes


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(config: ModelConfig, seed: int | None = None,
                kind: str = KIND_COND) -> ModelParams:
    """Glorot-uniform weights, zero biases, forget-gate bias +1; seeded."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    h = config.hidden_units

    def glorot(shape):
        bound = glorot_bound(shape[0], shape[1])
        return rng.uniform(-bound, bound, size=shape)

    arrays: dict[str, np.ndarray] = {}
    for name, shape in expected_shapes(config, kind).items():
        if len(shape) == 2:
            arrays[name] = glorot(shape)
        else:
            arrays[name] = np.zeros(shape)
    arrays["lstm_b"][h: 2 * h] = 1.0  # forget-gate bias
    return ModelParams(kind=kind, arrays=arrays)


def params_to_tensors(g: Graph, params: ModelParams) -> dict[str, Tensor]:
    return {name: g.tensor(arr) for name, arr in params.arrays.items()}


def collect_gradients(pt: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients after backward(); parameters the loss never touched get zeros."""
    return {
        name: (np.zeros_like(t.values) if t.grad is None else t.grad)
        for name, t in pt.items()
    }


# --------------------------------------------------------------- network parts


def cond_init(g: Graph, categorical: Tensor, pt: dict[str, Tensor],
              config: ModelConfig, mode: str) -> tuple[Tensor, Tensor]:
    """Initial (h0, c0) from the static features.

    h0 = dropout(tanh(categorical @ W + b)); c0 is zero unless the config
    conditions the cell state through its own dense layer (tanh, no dropout).
    """
    if categorical.shape[-1] != config.n_cat_features:
        raise ShapeError(
            f"categorical width {categorical.shape[-1]} != "
            f"n_cat_features {config.n_cat_features}"
        )
    batch = categorical.shape[0]
    z = g.add(g.matmul(categorical, pt["cond_W"]), g.tile_rows(pt["cond_b"], batch))
    h0 = g.dropout(g.tanh(z), config.dropout_rate, mode)
    if config.condition_cell_state:
        zc = g.add(g.matmul(categorical, pt["cond_cW"]),
                   g.tile_rows(pt["cond_cb"], batch))
        c0 = g.tanh(zc)
    else:
        c0 = g.tensor(np.zeros((batch, config.hidden_units)))
    return h0, c0


def lstm_step(g: Graph, x_t: Tensor, h: Tensor, c: Tensor,
              pt: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """One recurrence step with the packed (i, f, g, o) gate layout."""
    hidden = pt["lstm_Wh"].shape[0]
    batch = x_t.shape[0]
    z = g.add(
        g.add(g.matmul(x_t, pt["lstm_Wx"]), g.matmul(h, pt["lstm_Wh"])),
        g.tile_rows(pt["lstm_b"], batch),
    )
    i = g.sigmoid(g.slice(z, 1, 0, hidden))
    f = g.sigmoid(g.slice(z, 1, hidden, 2 * hidden))
    cand = g.tanh(g.slice(z, 1, 2 * hidden, 3 * hidden))
    o = g.sigmoid(g.slice(z, 1, 3 * hidden, 4 * hidden))
    c_new = g.add(g.mul(f, c), g.mul(i, cand))
    h_new = g.mul(o, g.tanh(c_new))
    return h_new, c_new


def encode(g: Graph, steps: list[Tensor], h0: Tensor, c0: Tensor,
           pt: dict[str, Tensor]) -> Tensor:
    """Run the recurrence over the history window; returns the last hidden state."""
    h, c = h0, c0
    for x_t in steps:
        h, c = lstm_step(g, x_t, h, c, pt)
    return h


def quantile_heads(g: Graph, h_final: Tensor,
                   pt: dict[str, Tensor]) -> list[Tensor]:
    """Nine parallel affine maps; heads[i] forecasts quantile (i+1)/10."""
    batch = h_final.shape[0]
    return [
        g.add(g.matmul(h_final, pt[f"head_W_{k}"]), g.tile_rows(pt[f"head_b_{k}"], batch))
        for k in range(1, 10)
    ]


def stack_static(history: np.ndarray, categorical: np.ndarray) -> np.ndarray:
    """Tile the static vector onto every timestep: [B, T, F] -> [B, T, F + C]."""
    history = np.asarray(history, dtype=float)
    categorical = np.asarray(categorical, dtype=float)
    b, t, _ = history.shape
    tiled = np.broadcast_to(categorical[:, None, :], (b, t, categorical.shape[1]))
    return np.concatenate([history, tiled], axis=2)


def forward_from_tensors(g: Graph, kind: str, pt: dict[str, Tensor],
                         history: np.ndarray, categorical: np.ndarray,
                         config: ModelConfig, mode: str) -> list[Tensor]:
    """Forward pass over existing parameter leaf tensors (see forward_graph)."""
    history = np.asarray(history, dtype=float)
    categorical = np.asarray(categorical, dtype=float)
    if history.ndim != 3 or history.shape[1] != config.history_len:
        raise ShapeError(
            f"history must be [batch, {config.history_len}, features], "
            f"got {history.shape}"
        )
    if history.shape[2] != config.n_ts_features:
        raise ShapeError(
            f"history feature width {history.shape[2]} != "
            f"n_ts_features {config.n_ts_features}"
        )
    if categorical.ndim != 2 or categorical.shape[0] != history.shape[0]:
        raise ShapeError(
            f"categorical must be [batch, features], got {categorical.shape}"
        )
    batch = history.shape[0]
    if kind == KIND_COND:
        cat_t = g.tensor(categorical)
        h0, c0 = cond_init(g, cat_t, pt, config, mode)
        steps = [g.tensor(history[:, t, :]) for t in range(config.history_len)]
    elif kind == KIND_PSEUDO:
        if categorical.shape[1] != config.n_cat_features:
            raise ShapeError(
                f"categorical width {categorical.shape[1]} != "
                f"n_cat_features {config.n_cat_features}"
            )
        stacked = stack_static(history, categorical)
        zeros = np.zeros((batch, config.hidden_units))
        h0, c0 = g.tensor(zeros), g.tensor(zeros)
        steps = [g.tensor(stacked[:, t, :]) for t in range(config.history_len)]
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    h_final = encode(g, steps, h0, c0, pt)
    return quantile_heads(g, h_final, pt)


def forward_graph(g: Graph, params: ModelParams, history: np.ndarray,
                  categorical: np.ndarray, config: ModelConfig,
                  mode: str) -> tuple[list[Tensor], dict[str, Tensor]]:
    """Build the full differentiable forward pass for a batch.

    Returns the nine head output tensors (each ``[batch, horizon]``) and the
    parameter leaf tensors, whose ``grad`` fields fill in on backward().
    """
    pt = params_to_tensors(g, params)
    heads = forward_from_tensors(g, params.kind, pt, history, categorical,
                                 config, mode)
    return heads, pt


def forward_batch(params: ModelParams, config: ModelConfig, history: np.ndarray,
                  categorical: np.ndarray, mode: str = "infer",
                  seed: int | None = None) -> np.ndarray:
    """Forward pass returning plain values of shape [batch, horizon, 9]."""
    g = Graph(seed=seed)
    heads, _ = forward_graph(g, params, history, categorical, config, mode)
    return np.stack([h.values for h in heads], axis=2)


def forward(history: np.ndarray, categorical: np.ndarray, params: ModelParams,
            config: ModelConfig, mode: str = "infer",
            seed: int | None = None) -> np.ndarray:
    """Single-sample forward pass: [history_len, F] + [C] -> [horizon, 9]."""
    out = forward_batch(
        params, config, np.asarray(history, dtype=float)[None, :, :],
        np.asarray(categorical, dtype=float)[None, :], mode=mode, seed=seed,
    )
    return out[0]


@dataclass
class QuantileForecast:
    """Destandardized per-county forecast: values[d, i] is day d at quantile (i+1)/10."""

    county_id: str
    onset_date: str
    values: np.ndarray
