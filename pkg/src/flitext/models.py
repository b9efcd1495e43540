"""Inspirer (transformer encoder + 2-layer MLP head + projection) and target
(TextCNN encoder + linear head + projection) as pure functions of a flat
name->Tensor parameter store.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, embedding_lookup, row
from .errors import ConfigError, PreconditionError
from .ops import attention_block, conv1d_bank, dropout, linear, maxpool_over_time

PAD_ID = 0
CLS_ID = 1
UNK_ID = 2

PROJECTION_ACTIVATIONS = ("none", "relu", "tanh")


@dataclass
class InspirerConfig:
    """Desk-scale defaults: 4 layers of width 64 with 4 heads. The paper-scale
    preset (12x768, max_len 256) lives in efficiency.full_scale_presets()."""

    vocab_size: int
    classes: int
    layers: int = 4
    d: int = 64
    heads: int = 4
    ff_dim: int = 128
    max_len: int = 32
    mlp_hidden: int = 64
    projection_dim: int | None = None
    dropout: float = 0.1

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.heads < 1 or self.d % self.heads != 0:
            raise ConfigError(f"hidden size {self.d} not divisible by {self.heads} heads")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must cover the reserved ids (pad/cls/unk)")
        if self.projection_dim is not None and self.projection_dim < 1:
            raise ConfigError(f"projection_dim must be >= 1, got {self.projection_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class TargetConfig:
    vocab_size: int
    classes: int
    filter_sizes: tuple = (2, 3, 5)
    channels: int = 16
    emb_dim: int = 32
    projection_dim: int | None = None
    projection_activation: str = "relu"
    dropout: float = 0.5

    def __post_init__(self):
        self.filter_sizes = tuple(self.filter_sizes)
        if not self.filter_sizes:
            raise ConfigError("filter_sizes must be nonempty")
        if list(self.filter_sizes) != sorted(set(self.filter_sizes)):
            raise ConfigError(f"filter sizes must be strictly increasing and unique, got {self.filter_sizes}")
        if min(self.filter_sizes) < 1:
            raise ConfigError(f"filter sizes must be >= 1, got {self.filter_sizes}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must cover the reserved ids (pad/cls/unk)")
        if self.projection_activation not in PROJECTION_ACTIVATIONS:
            raise ConfigError(
                f"projection_activation must be one of {PROJECTION_ACTIVATIONS}, "
                f"got {self.projection_activation!r}"
            )
        if self.projection_dim is not None and self.projection_dim < 1:
            raise ConfigError(f"projection_dim must be >= 1, got {self.projection_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class ForwardTrace:
    """Everything a single forward exposes for losses and distillation."""

    logits: Tensor
    pooled: Tensor
    layer_states: list | None = None      # inspirer: one [n, d] per layer
    feature_maps: dict | None = None      # target: size -> relu'd map
    pooled_by_size: dict | None = None    # target: size -> [ch] vector
    projected: dict = field(default_factory=dict)


def _glorot(rng, fan_in, fan_out, shape):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _param(arr):
    return Tensor(np.asarray(arr, dtype=ad.default_dtype()), requires_grad=True)


def init_inspirer(config: InspirerConfig, rng) -> dict:
    """Fresh parameter store; names are stable and checkpoint-ordered."""
    d, ff = config.d, config.ff_dim
    p = {}
    tok = rng.normal(0.0, 0.1, size=(config.vocab_size, d))
    tok[PAD_ID] = 0.0
    p["tok_emb"] = _param(tok)
    p["pos_emb"] = _param(rng.normal(0.0, 0.1, size=(config.max_len, d)))
    for i in range(config.layers):
        pre = f"block{i}."
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + name] = _param(_glorot(rng, d, d, (d, d)))
        for name in ("bq", "bk", "bv", "bo"):
            p[pre + name] = _param(np.zeros(d))
        p[pre + "w1"] = _param(_glorot(rng, d, ff, (d, ff)))
        p[pre + "b1"] = _param(np.zeros(ff))
        p[pre + "w2"] = _param(_glorot(rng, ff, d, (ff, d)))
        p[pre + "b2"] = _param(np.zeros(d))
        p[pre + "ln1_g"] = _param(np.ones(d))
        p[pre + "ln1_b"] = _param(np.zeros(d))
        p[pre + "ln2_g"] = _param(np.ones(d))
        p[pre + "ln2_b"] = _param(np.zeros(d))
    p["cls.w1"] = _param(_glorot(rng, d, config.mlp_hidden, (d, config.mlp_hidden)))
    p["cls.b1"] = _param(np.zeros(config.mlp_hidden))
    p["cls.w2"] = _param(_glorot(rng, config.mlp_hidden, config.classes, (config.mlp_hidden, config.classes)))
    p["cls.b2"] = _param(np.zeros(config.classes))
    if config.projection_dim is not None:
        p["proj.w"] = _param(_glorot(rng, d, config.projection_dim, (d, config.projection_dim)))
        p["proj.b"] = _param(np.zeros(config.projection_dim))
    return p


def init_target(config: TargetConfig, rng, embedding_matrix=None) -> dict:
    """Fresh parameter store; `embedding_matrix` overrides the random rows."""
    p = {}
    if embedding_matrix is not None:
        emb = np.asarray(embedding_matrix, dtype=float)
        if emb.shape != (config.vocab_size, config.emb_dim):
            raise ConfigError(
                f"embedding matrix shape {emb.shape} does not match "
                f"(vocab {config.vocab_size}, dim {config.emb_dim})"
            )
        emb = emb.copy()
    else:
        emb = rng.normal(0.0, 0.1, size=(config.vocab_size, config.emb_dim))
    emb[PAD_ID] = 0.0
    p["emb"] = _param(emb)
    for k in config.filter_sizes:
        fan_in = k * config.emb_dim
        p[f"conv{k}.w"] = _param(_glorot(rng, fan_in, config.channels, (k, config.emb_dim, config.channels)))
        p[f"conv{k}.b"] = _param(np.zeros(config.channels))
    total_ch = config.channels * len(config.filter_sizes)
    p["cls.w"] = _param(_glorot(rng, total_ch, config.classes, (total_ch, config.classes)))
    p["cls.b"] = _param(np.zeros(config.classes))
    if config.projection_dim is not None:
        p["proj.w"] = _param(_glorot(rng, config.channels, config.projection_dim, (config.channels, config.projection_dim)))
        p["proj.b"] = _param(np.zeros(config.projection_dim))
    return p


def _block_view(params, i):
    pre = f"block{i}."
    return {name[len(pre):]: t for name, t in params.items() if name.startswith(pre)}


def _check_mode(mode, dropout_rate, rng):
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and dropout_rate > 0.0 and rng is None:
        raise ConfigError("train-mode forward with dropout needs an rng")


def inspirer_forward(tokens, config: InspirerConfig, params, mode="eval", rng=None) -> ForwardTrace:
    """Run the transformer encoder; exposes every layer's hidden states.

    The pooled vector is the final layer's classification-token (position 0)
    row; the head is a two-layer MLP with tanh.
    """
    _check_mode(mode, config.dropout, rng)
    ids = np.asarray(tokens, dtype=np.int64)
    n = ids.shape[0]
    if n > config.max_len:
        raise PreconditionError(f"sequence length {n} exceeds max_len {config.max_len}")
    if n < 1 or ids[0] != CLS_ID:
        raise PreconditionError("a classification token must occupy position 0")
    train = mode == "train"
    x = embedding_lookup(params["tok_emb"], ids) + embedding_lookup(params["pos_emb"], np.arange(n))
    states = []
    for i in range(config.layers):
        x = attention_block(x, _block_view(params, i), config.heads,
                            dropout_rate=config.dropout, train=train, rng=rng)
        states.append(x)
    h = row(states[-1], 0)
    hidden = ad.tanh(linear(h, params["cls.w1"], params["cls.b1"]))
    logits = linear(hidden, params["cls.w2"], params["cls.b2"])
    return ForwardTrace(logits=logits, pooled=h, layer_states=states)


def target_forward(tokens, config: TargetConfig, params, mode="eval", rng=None) -> ForwardTrace:
    """Run the TextCNN: per-size valid conv -> relu -> max-over-time, concat,
    dropout (train), linear head."""
    _check_mode(mode, config.dropout, rng)
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.shape[0] < max(config.filter_sizes):
        raise PreconditionError(
            f"sequence length {ids.shape[0]} is shorter than the largest filter "
            f"size {max(config.filter_sizes)}; pad inputs upstream"
        )
    train = mode == "train"
    x = embedding_lookup(params["emb"], ids)
    filters = {k: (params[f"conv{k}.w"], params[f"conv{k}.b"]) for k in config.filter_sizes}
    maps = conv1d_bank(x, filters)
    feature_maps = {k: ad.relu(maps[k]) for k in config.filter_sizes}
    pooled_by_size = {k: maxpool_over_time(feature_maps[k]) for k in config.filter_sizes}
    c = ad.concat([pooled_by_size[k] for k in config.filter_sizes], axis=0)
    head_in = dropout(c, config.dropout, rng) if train and config.dropout > 0 else c
    logits = linear(head_in, params["cls.w"], params["cls.b"])
    return ForwardTrace(logits=logits, pooled=c, feature_maps=feature_maps,
                        pooled_by_size=pooled_by_size)


def apply_activation(t, name):
    if name == "none":
        return t
    if name == "relu":
        return ad.relu(t)
    if name == "tanh":
        return ad.tanh(t)
    raise ConfigError(f"unknown projection activation {name!r}")


def project_features(trace: ForwardTrace, pairs, params, activation) -> dict:
    """Project aligned features into the shared space (Ig / Tg).

    For an inspirer trace, keys are the transformer layer indices in `pairs`
    and the projection input is the mean over token positions of that layer's
    hidden states. For a target trace, keys are the filter sizes and the input
    is the post-max-pool per-size vector. Results land in trace.projected.
    """
    if "proj.w" not in params:
        raise ConfigError("model has no projection parameters (projection_dim not set)")
    pw, pb = params["proj.w"], params["proj.b"]
    out = {}
    if trace.layer_states is not None:
        keys = [l for l, _ in pairs]
        for l in keys:
            if l in out:
                continue
            if not 0 <= l < len(trace.layer_states):
                raise ConfigError(f"alignment references transformer layer {l}, "
                                  f"model has {len(trace.layer_states)}")
            summary = ad.tmean(trace.layer_states[l], axis=0)
            out[l] = apply_activation(linear(summary, pw, pb), activation)
    elif trace.pooled_by_size is not None:
        keys = [k for _, k in pairs]
        for k in keys:
            if k in out:
                continue
            if k not in trace.pooled_by_size:
                raise ConfigError(f"alignment references filter size {k}, "
                                  f"model has {sorted(trace.pooled_by_size)}")
            out[k] = apply_activation(linear(trace.pooled_by_size[k], pw, pb), activation)
    else:
        raise ConfigError("trace carries neither layer states nor pooled feature maps")
    trace.projected = out
    return out


def param_count(params) -> int:
    """Shape-walk over an instantiated store (oracle for the closed form)."""
    return sum(int(t.size) for t in params.values())


def clone_store(params) -> dict:
    """Deep copy (fresh buffers, grads cleared)."""
    return {name: Tensor(t.data.copy(), requires_grad=t.requires_grad) for name, t in params.items()}


def stores_equal(a, b) -> bool:
    """Bitwise equality of two parameter stores."""
    if a.keys() != b.keys():
        return False
    return all(np.array_equal(a[k].data, b[k].data) for k in a)
