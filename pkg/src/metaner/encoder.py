"""A small post-norm transformer token encoder with a softmax tagging head.

Parameters live in plain numpy arrays inside ``ModelParameters``. For a
forward pass they are bound to graph leaves (``bind``); frozen ones become
constants. Trainable arrays may carry an extra leading task axis, in which
case every task runs with its own copy while frozen arrays stay shared.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractViolation

NEG_INF = -1e9
BUCKET = 8


def padded_length(n, max_len):
    """Inputs are padded to a multiple of 8 so results never depend on batch mates."""
    return min(max_len, -(-n // BUCKET) * BUCKET)


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    label_count: int
    hidden_size: int = 64
    layers: int = 2
    attention_heads: int = 2
    feedforward_size: int = 256
    max_positions: int = 128
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.hidden_size % self.attention_heads:
            raise ConfigError("hidden_size must be divisible by attention_heads")
        if min(self.vocab_size, self.label_count, self.layers, self.max_positions) < 1:
            raise ConfigError("sizes must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")

    def shapes(self):
        d, f = self.hidden_size, self.feedforward_size
        out = {
            "embeddings.token": (self.vocab_size, d),
            "embeddings.position": (self.max_positions, d),
            "embeddings.norm.gain": (d,),
            "embeddings.norm.bias": (d,),
        }
        for i in range(self.layers):
            p = f"layer{i}."
            for proj in ("query", "key", "value", "output"):
                out[p + f"attn.{proj}.weight"] = (d, d)
                out[p + f"attn.{proj}.bias"] = (d,)
            out[p + "attn.norm.gain"] = (d,)
            out[p + "attn.norm.bias"] = (d,)
            out[p + "ffn.in.weight"] = (d, f)
            out[p + "ffn.in.bias"] = (f,)
            out[p + "ffn.out.weight"] = (f, d)
            out[p + "ffn.out.bias"] = (d,)
            out[p + "ffn.norm.gain"] = (d,)
            out[p + "ffn.norm.bias"] = (d,)
        out["classifier.weight"] = (self.label_count, d)
        out["classifier.bias"] = (self.label_count,)
        return out


@dataclass
class ModelParameters:
    config: EncoderConfig
    arrays: dict
    frozen: frozenset = field(default_factory=frozenset)

    def trainable_names(self):
        return [n for n in self.arrays if n not in self.frozen]

    def trainable(self):
        return {n: self.arrays[n] for n in self.trainable_names()}

    def with_arrays(self, updates):
        arrays = dict(self.arrays)
        arrays.update(updates)
        return replace(self, arrays=arrays)

    def copy(self):
        return replace(self, arrays={k: v.copy() for k, v in self.arrays.items()})

    def stacked(self, count):
        """Per-task copies of the trainable arrays along a new leading axis."""
        return {n: np.repeat(self.arrays[n][None], count, axis=0)
                for n in self.trainable_names()}


def init_parameters(config, seed=0, gain=0.02):
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in config.shapes().items():
        if name.endswith(".gain"):
            arrays[name] = np.ones(shape)
        elif name.endswith(".bias"):
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.normal(0.0, gain, size=shape)
    return ModelParameters(config, arrays)


def parameter_groups(config):
    groups = {"embeddings": [n for n in config.shapes() if n.startswith("embeddings.")],
              "classifier": ["classifier.weight", "classifier.bias"]}
    for i in range(config.layers):
        groups[f"layer{i}"] = [n for n in config.shapes() if n.startswith(f"layer{i}.")]
    return groups


def freeze(params, groups):
    """Mark parameter groups frozen.

    Group names: ``embeddings``, ``classifier``, ``layerN`` or ``bottomK``
    (layers 0..K-1). An empty list unfreezes everything.
    """
    table = parameter_groups(params.config)
    names = set()
    for g in groups:
        if g.startswith("bottom") and g[6:].isdigit():
            k = int(g[6:])
            if k > params.config.layers:
                raise ConfigError(f"{g}: model has only {params.config.layers} layers")
            for i in range(k):
                names.update(table[f"layer{i}"])
        elif g in table:
            names.update(table[g])
        else:
            raise ConfigError(f"unknown parameter group {g!r}")
    return replace(params, frozen=frozenset(names))


def bind(params, stacked_arrays=None):
    """Graph leaves for a forward pass.

    ``stacked_arrays`` (name -> array with a task axis) overrides the
    trainable arrays, e.g. with the output of ``ModelParameters.stacked``.
    """
    bound = {}
    for name, arr in params.arrays.items():
        if name in params.frozen:
            bound[name] = ad.constant(arr)
        else:
            value = stacked_arrays[name] if stacked_arrays is not None else arr
            bound[name] = ad.param(value, name)
    return bound


class Dropout:
    """Inverted dropout drawing from one generator, or one per task."""

    def __init__(self, rate, rngs):
        self.rate = rate
        self.rngs = rngs

    def __call__(self, x):
        if self.rate == 0.0:
            return x
        keep = 1.0 - self.rate
        if isinstance(self.rngs, list):
            if len(self.rngs) != x.shape[0]:
                raise ContractViolation("one dropout generator per task is required")
            mask = np.stack([r.random(x.shape[1:]) < keep for r in self.rngs])
        else:
            mask = self.rngs.random(x.shape) < keep
        return x * (mask / keep)


def _lift(t, base_ndim, target_ndim):
    # put a stacked parameter's task axis first, singleton axes up to the data axes
    if t.ndim == base_ndim:
        return t
    pad = target_ndim - base_ndim - 1
    return t.reshape((t.shape[0],) + (1,) * pad + t.shape[1:])


def _linear(x, bound, prefix):
    w = bound[prefix + ".weight"]
    b = bound[prefix + ".bias"]
    if w.ndim == 3 and x.ndim > 3:
        # one GEMM per task instead of one per row
        lead = x.shape[:-1]
        y = x.reshape(x.shape[0], -1, x.shape[-1]) @ w + _lift(b, 1, 3)
        return y.reshape(lead + (w.shape[-1],))
    return x @ _lift(w, 2, x.ndim) + _lift(b, 1, x.ndim)


def _norm(x, bound, prefix):
    return ad.layer_norm(x, _lift(bound[prefix + ".gain"], 1, x.ndim),
                         _lift(bound[prefix + ".bias"], 1, x.ndim))


def _split_heads(x, heads):
    # [..., L, d] -> [..., H, L, d/H]
    lead = x.shape[:-1]
    x = x.reshape(lead + (heads, x.shape[-1] // heads))
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return x.transpose(*axes)


def _merge_heads(x):
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    x = x.transpose(*axes)
    return x.reshape(x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def forward_hidden(config, bound, ids, keys=None, dropout=None):
    """Hidden states ``[..., L, hidden]`` for piece ids ``[..., L]``.

    ``keys`` marks real (non-padding) positions; padded keys get no attention.
    ``dropout`` is a ``Dropout`` in training mode and ``None`` for evaluation.
    """
    ids = np.asarray(ids)
    L = ids.shape[-1]
    if L > config.max_positions:
        raise ContractViolation(f"input of {L} positions exceeds max_positions "
                                f"{config.max_positions}; window it first")
    drop = dropout if dropout is not None else (lambda t: t)
    x = ad.embed(bound["embeddings.token"], ids)
    pos = bound["embeddings.position"]
    if pos.ndim == 3:
        p = ad.embed(pos, np.broadcast_to(np.arange(L), (pos.shape[0], L)))
        p = p.reshape((p.shape[0],) + (1,) * (x.ndim - 3) + p.shape[1:])
    else:
        p = ad.embed(pos, np.arange(L))
    x = drop(_norm(x + p, bound, "embeddings.norm"))

    heads = config.attention_heads
    scale = 1.0 / np.sqrt(config.hidden_size // heads)
    bias = None
    if keys is not None:
        keys = np.asarray(keys, dtype=bool)
        bias = np.where(keys, 0.0, NEG_INF)[..., None, None, :]
    for i in range(config.layers):
        pre = f"layer{i}."
        q = _split_heads(_linear(x, bound, pre + "attn.query"), heads)
        k = _split_heads(_linear(x, bound, pre + "attn.key"), heads)
        v = _split_heads(_linear(x, bound, pre + "attn.value"), heads)
        scores = (q @ ad.swap_last(k)) * scale
        if bias is not None:
            scores = scores + bias
        ctx = _merge_heads(ad.softmax(scores) @ v)
        x = _norm(x + drop(_linear(ctx, bound, pre + "attn.output")), bound,
                  pre + "attn.norm")
        ff = _linear(ad.gelu(_linear(x, bound, pre + "ffn.in")), bound, pre + "ffn.out")
        x = _norm(x + drop(ff), bound, pre + "ffn.norm")
    return x


def forward_probs(bound, h):
    w = _lift(bound["classifier.weight"], 2, h.ndim)
    b = _lift(bound["classifier.bias"], 1, h.ndim)
    return ad.softmax(h @ ad.swap_last(w) + b)


# ---------------------------------------------------------------- plain API

def encode(params, piece_ids):
    """Evaluation-mode hidden states ``[L, hidden]`` for one window."""
    piece_ids = np.asarray(piece_ids)
    n = len(piece_ids)
    if n > params.config.max_positions:
        raise ContractViolation(f"input of {n} positions exceeds max_positions "
                                f"{params.config.max_positions}; window it first")
    L = padded_length(n, params.config.max_positions)
    ids = np.zeros((1, L), dtype=np.int64)
    ids[0, :n] = piece_ids
    keys = np.arange(L)[None] < n
    return forward_hidden(params.config, bind(params), ids, keys).data[0, :n]


def classify(params, h):
    """Per-position label distributions for hidden states ``h``."""
    return forward_probs(bind(params), ad.constant(h)).data


def sentence_rep(params, piece_ids):
    """Hidden vector at the first ([CLS]) position of the first window."""
    piece_ids = np.asarray(piece_ids)[: params.config.max_positions]
    return encode(params, piece_ids)[0]
