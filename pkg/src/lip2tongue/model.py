"""Two-stream CNN + LSTM + attention-gate network mapping lip clips to ultrasound frames.

Per time step ``t`` of a sequence of clips::

    feat_gray = tower_gray(clip_t)            # conv -> BN -> leaky -> pool, repeated
    feat_flow = tower_flow(flow_t)            # same layout over (N-1)*2 flow planes
    x_t       = fuse(feat_gray, feat_flow)    # concat -> dense -> BN -> leaky
    y_t, st   = lstm_step(x_t, st)
    F_t, y'_t = attention_gate(y_t)           # scalar sigmoid gate, y' = F * y
    image_t   = decode(y'_t)                  # dense -> BN -> leaky -> dense -> sigmoid

Parameters live in a :class:`ModelParams` keyed by dotted names; all layer
math goes through :mod:`lip2tongue.functional`, so the whole pipeline is
differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import functional as fn
from .errors import ConfigError, DimensionError
from .functional import BatchNormStats
from .tensor import Tensor, concat, get_dtype, stack

LSTM_GATES = ("i", "f", "o", "g")


@dataclass
class ModelConfig:
    H: int = 96
    W: int = 96
    N: int = 7
    T: int = 5
    # (filters, kernel, pool) per layer; an optional 4th entry is the conv stride (default 1)
    tower: tuple = ((32, 3, 2), (64, 3, 2), (64, 3, 2))
    embed_dim: int = 256
    lstm_hidden: int = 256
    decoder_hidden: int = 256
    out_h: int = 64
    out_w: int = 64
    leaky_slope: float = 0.3
    conv_dropout: float = 0.25
    fc_dropout: float = 0.5
    bn_momentum: float = 0.1
    bn_eps: float = 1e-3
    use_flow_tower: bool = True
    zero_flow: bool = False
    use_attention: bool = True

    def __post_init__(self):
        layers = []
        for layer in self.tower:
            layer = tuple(int(v) for v in layer)
            if len(layer) == 3:
                layer = layer + (1,)
            if len(layer) != 4:
                raise ConfigError(f"tower layer must be (filters, kernel, pool[, stride]), got {layer}")
            layers.append(layer)
        self.tower = tuple(layers)

    def validate(self) -> None:
        for f in ("H", "W", "N", "T", "embed_dim", "lstm_hidden", "decoder_hidden", "out_h", "out_w"):
            if getattr(self, f) < 1:
                raise ConfigError(f"model.{f} must be positive, got {getattr(self, f)}")
        if self.N < 2 and self.use_flow_tower:
            raise ConfigError("the flow tower needs clips of at least 2 frames")
        if not self.tower:
            raise ConfigError("model.tower needs at least one layer")
        for layer in self.tower:
            if min(layer) < 1:
                raise ConfigError(f"bad tower layer {layer}")
        h, w = self.tower_output_hw()
        if h < 1 or w < 1:
            raise ConfigError(f"tower pools {self.H}x{self.W} down to nothing")

    @property
    def flow_channels(self) -> int:
        return 2 * (self.N - 1)

    def tower_output_hw(self) -> tuple:
        h, w = self.H, self.W
        for _, k, pool, stride in self.tower:
            # "same"-padded conv (padding k//2), then non-overlapping pooling
            h = (h + 2 * (k // 2) - k) // stride + 1
            w = (w + 2 * (k // 2) - k) // stride + 1
            h = (h - pool) // pool + 1 if h >= pool else 0
            w = (w - pool) // pool + 1 if w >= pool else 0
        return h, w

    @property
    def feature_dim(self) -> int:
        h, w = self.tower_output_hw()
        return self.tower[-1][0] * h * w

    @property
    def fuse_in(self) -> int:
        return self.feature_dim * (2 if self.use_flow_tower else 1)


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "LstmState":
        return cls(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


@dataclass
class ModelParams:
    """Learnable tensors plus batch-norm running statistics, both keyed by dotted names."""

    tensors: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def to_arrays(self) -> dict:
        out = {k: t.data for k, t in self.tensors.items()}
        for k, s in self.stats.items():
            out[f"{k}.running_mean"] = s.mean
            out[f"{k}.running_var"] = s.var
        return out

    def load_arrays(self, arrays: dict) -> None:
        """Copy values in from a name -> array mapping; every name and shape must match."""
        expected = self.to_arrays()
        missing = [k for k in expected if k not in arrays]
        extra = [k for k in arrays if k not in expected]
        if missing or extra:
            raise DimensionError(f"checkpoint mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for k, ref in expected.items():
            if arrays[k].shape != ref.shape:
                raise DimensionError(f"checkpoint parameter {k}: shape {arrays[k].shape} != expected {ref.shape}")
        for k, t in self.tensors.items():
            t.data = np.array(arrays[k], dtype=t.data.dtype)
        for k, s in self.stats.items():
            s.mean = np.array(arrays[f"{k}.running_mean"], dtype=s.mean.dtype)
            s.var = np.array(arrays[f"{k}.running_var"], dtype=s.var.dtype)

    def copy(self, dtype=None) -> "ModelParams":
        dtype = dtype or get_dtype()
        return ModelParams(
            {k: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad, name=k) for k, t in self.tensors.items()},
            {k: BatchNormStats(s.mean.astype(dtype), s.var.astype(dtype)) for k, s in self.stats.items()},
        )

    def grads(self) -> dict:
        return {k: t.grad for k, t in self.tensors.items()}


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases, forget-gate bias 1, BN gamma 1 / beta 0."""
    config.validate()
    rng = np.random.default_rng(seed)
    dtype = get_dtype()
    p = ModelParams()

    def add(name, arr):
        p.tensors[name] = Tensor(arr, requires_grad=True, name=name)

    def add_bn(name, ch):
        add(f"{name}.gamma", np.ones(ch, dtype))
        add(f"{name}.beta", np.zeros(ch, dtype))
        p.stats[name] = BatchNormStats.fresh(ch, dtype)

    towers = [("gray", config.N)]
    if config.use_flow_tower:
        towers.append(("flow", config.flow_channels))
    for prefix, in_ch in towers:
        for i, (filters, k, _pool, _stride) in enumerate(config.tower):
            add(f"{prefix}.conv{i}.w", _glorot(rng, (filters, in_ch, k, k), in_ch * k * k, filters * k * k, dtype))
            add(f"{prefix}.conv{i}.b", np.zeros(filters, dtype))
            add_bn(f"{prefix}.bn{i}", filters)
            in_ch = filters

    E, Hd = config.embed_dim, config.lstm_hidden
    add("fuse.w", _glorot(rng, (E, config.fuse_in), config.fuse_in, E, dtype))
    add("fuse.b", np.zeros(E, dtype))
    add_bn("fuse.bn", E)
    for gate in LSTM_GATES:
        add(f"lstm.W_x{gate}", _glorot(rng, (Hd, E), E, Hd, dtype))
        add(f"lstm.W_h{gate}", _glorot(rng, (Hd, Hd), Hd, Hd, dtype))
        add(f"lstm.b_{gate}", np.full(Hd, 1.0 if gate == "f" else 0.0, dtype))
    if config.use_attention:
        add("att.W", _glorot(rng, (1, Hd), Hd, 1, dtype))
        add("att.b", np.zeros(1, dtype))
    D, out = config.decoder_hidden, config.out_h * config.out_w
    add("dec.w1", _glorot(rng, (D, Hd), Hd, D, dtype))
    add("dec.b1", np.zeros(D, dtype))
    add_bn("dec.bn", D)
    add("dec.w2", _glorot(rng, (out, D), D, out, dtype))
    add("dec.b2", np.zeros(out, dtype))
    return p


def _bn(x, params, name, config, mode):
    return fn.batchnorm(x, params[f"{name}.gamma"], params[f"{name}.beta"], params.stats[name],
                        mode, config.bn_momentum, config.bn_eps)


def tower_forward(x, params: ModelParams, prefix: str, config: ModelConfig, mode: str = "infer", rng=None) -> Tensor:
    """Run one convolutional tower on ``[B, C, H, W]`` (or ``[C, H, W]``) and flatten."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    single = x.ndim == 3
    if single:
        x = x.reshape((1,) + x.shape)
    expected = config.N if prefix == "gray" else config.flow_channels
    if x.shape[1:] != (expected, config.H, config.W):
        raise DimensionError(
            f"tower {prefix!r} layer 0: input {x.shape[1:]} != expected {(expected, config.H, config.W)}"
        )
    for i, (_filters, k, pool, stride) in enumerate(config.tower):
        x = fn.conv2d(x, params[f"{prefix}.conv{i}.w"], params[f"{prefix}.conv{i}.b"], stride=stride, padding=k // 2)
        x = _bn(x, params, f"{prefix}.bn{i}", config, mode)
        x = fn.leaky_relu(x, config.leaky_slope)
        x = fn.maxpool2d(x, pool, pool)
        x = fn.dropout(x, config.conv_dropout, mode, rng)
    out = x.reshape(x.shape[0], -1)
    return out[0] if single else out


def fuse(feat_gray: Tensor, feat_flow: Tensor | None, params: ModelParams, config: ModelConfig,
         mode: str = "infer", rng=None) -> Tensor:
    """Concatenate tower features (gray first) and project to ``embed_dim``."""
    x = feat_gray if feat_flow is None else concat([feat_gray, feat_flow], axis=-1)
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    x = fn.dense(x, params["fuse.w"], params["fuse.b"])
    x = _bn(x, params, "fuse.bn", config, mode)
    x = fn.leaky_relu(x, config.leaky_slope)
    x = fn.dropout(x, config.fc_dropout, mode, rng)
    return x[0] if single else x


def lstm_step(x_t: Tensor, state: LstmState, params: ModelParams):
    """One LSTM update; returns ``(y_t, new_state)`` with ``y_t = h_t``.

    i, f, o = sigmoid(W_x x + W_h h + b); g = tanh(W_xg x + W_hg h + b_g)
    c = f * c_prev + i * g; h = o * tanh(c)
    """
    h_prev, c_prev = state.h, state.c
    if h_prev.shape[-1] != params["lstm.W_hi"].shape[1] or c_prev.shape != h_prev.shape:
        raise DimensionError(f"lstm_step: state shapes h={h_prev.shape} c={c_prev.shape} do not fit the weights")

    def pre(gate):
        return (fn.dense(x_t, params[f"lstm.W_x{gate}"], params[f"lstm.b_{gate}"])
                + fn.dense(h_prev, params[f"lstm.W_h{gate}"]))

    i = fn.sigmoid(pre("i"))
    f = fn.sigmoid(pre("f"))
    o = fn.sigmoid(pre("o"))
    g = fn.tanh(pre("g"))
    c = f * c_prev + i * g
    h = o * fn.tanh(c)
    return h, LstmState(h, c)


def attention_gate(y_t: Tensor, W_att: Tensor, b_att: Tensor):
    """Scalar gate ``F = sigmoid(W_att . y + b_att)``; returns ``(F, F * y)``."""
    F = fn.sigmoid(fn.dense(y_t, W_att, b_att))
    return F, y_t * F


def decode(y: Tensor, params: ModelParams, config: ModelConfig, mode: str = "infer", rng=None) -> Tensor:
    """Map gated LSTM outputs ``[B, hidden]`` (or ``[hidden]``) to images in (0, 1)."""
    single = y.ndim == 1
    if single:
        y = y.reshape(1, -1)
    x = fn.dense(y, params["dec.w1"], params["dec.b1"])
    x = _bn(x, params, "dec.bn", config, mode)
    x = fn.leaky_relu(x, config.leaky_slope)
    x = fn.dropout(x, config.fc_dropout, mode, rng)
    x = fn.sigmoid(fn.dense(x, params["dec.w2"], params["dec.b2"]))
    x = x.reshape(x.shape[0], config.out_h, config.out_w)
    return x[0] if single else x


@dataclass
class SequenceOutput:
    images: Tensor       # [B, T, out_h, out_w]
    attention: np.ndarray  # [B, T]


def forward_sequence(gray, flow, params: ModelParams, config: ModelConfig, mode: str = "infer",
                     rng: np.random.Generator | None = None) -> SequenceOutput:
    """Predict one ultrasound frame per clip.

    ``gray`` is ``[B, T, N, H, W]`` and ``flow`` ``[B, T, N-1, 2, H, W]``
    (the leading batch axis may be omitted for both). ``flow`` may be None
    when the model has no flow tower or the flow feature is zeroed.
    """
    gray = np.asarray(gray.data if isinstance(gray, Tensor) else gray)
    unbatched = gray.ndim == 4
    if unbatched:
        gray = gray[None]
        flow = None if flow is None else np.asarray(flow)[None]
    if gray.ndim != 5:
        raise DimensionError(f"forward_sequence: gray input must be [B, T, N, H, W], got {gray.shape}")
    B, T = gray.shape[:2]
    if T < 1:
        raise DimensionError("forward_sequence needs at least one clip")
    dtype = get_dtype()

    feat_gray = tower_forward(gray.reshape((B * T,) + gray.shape[2:]).astype(dtype, copy=False),
                              params, "gray", config, mode, rng)
    feat_flow = None
    if config.use_flow_tower:
        if config.zero_flow:
            feat_flow = Tensor(np.zeros((B * T, config.feature_dim), dtype))
        else:
            if flow is None:
                raise DimensionError("forward_sequence: model has a flow tower but no flow input was given")
            flow = np.asarray(flow)
            if flow.shape[:2] != (B, T) or flow.shape[2:4] != (config.N - 1, 2):
                raise DimensionError(
                    f"forward_sequence: flow input {flow.shape} != {(B, T, config.N - 1, 2, config.H, config.W)}"
                )
            flat = flow.reshape((B * T, config.flow_channels) + flow.shape[4:]).astype(dtype, copy=False)
            feat_flow = tower_forward(flat, params, "flow", config, mode, rng)

    emb = fuse(feat_gray, feat_flow, params, config, mode, rng).reshape(B, T, config.embed_dim)
    state = LstmState.zeros(B, config.lstm_hidden)
    gated, gates = [], []
    for t in range(T):
        y, state = lstm_step(emb[:, t], state, params)
        if config.use_attention:
            F, y = attention_gate(y, params["att.W"], params["att.b"])
            gates.append(F.data[:, 0])
        else:
            gates.append(np.ones(B, dtype))
        gated.append(y)
    ys = stack(gated, axis=1).reshape(B * T, config.lstm_hidden)
    images = decode(ys, params, config, mode, rng).reshape(B, T, config.out_h, config.out_w)
    att = np.stack(gates, axis=1)
    if unbatched:
        images = images[0]
        att = att[0]
    return SequenceOutput(images, att)


def config_fields() -> list:
    return [f.name for f in fields(ModelConfig)]
