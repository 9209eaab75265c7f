"""Transformer encoder with an additive per-token attention bias.

The attention scores of every layer can be shifted by a per-token bias
vector of nonpositive log-probabilities. Three application modes exist:

* ``key``: bias[t] is added to column t of the score matrix, so lowering a
  token's bias reduces how much information other tokens read from it.
  This is the mode the scoring model trains through, and in the -inf limit
  it removes the token exactly.
* ``query``: bias[t] is added to row t instead. For finite biases this is a
  softmax no-op; at -inf it silences the token's own reads but leaves the
  token readable by everyone else, which is why one-sided masking is only
  an approximation of dropping the token.
* ``symmetric``: both. This realizes exact hard-drop equivalence and is
  what padding and the verification harness use.

Model-size presets and the closed-form parameter count mirror the standard
compact BERT family the sizes are borrowed from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, InputTooLongError
from .tables import TokenizedSequence, STRUCT_ID_CAP

BIAS_MODES = ("key", "query", "symmetric")

# (num_layers, hidden, num_heads, intermediate)
_PRESETS = {
    "mini": (4, 256, 4, 1024),
    "small": (4, 512, 8, 2048),
    "medium": (8, 512, 8, 2048),
    "large": (24, 1024, 16, 4096),
}

DEFAULT_VOCAB_SIZE = 30522  # BERT wordpiece size, kept for parameter parity


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    hidden: int
    num_heads: int
    intermediate: int
    vocab_size: int = DEFAULT_VOCAB_SIZE
    max_input: int = 1024
    hidden_dropout: float = 0.0
    attention_dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.hidden % self.num_heads != 0:
            raise ConfigError(
                f"hidden {self.hidden} not divisible by num_heads {self.num_heads}")
        if self.max_input < 4:
            raise ConfigError("max_input must be >= 4")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.num_heads


def preset(name: str, **overrides) -> EncoderConfig:
    """Named model size: mini, small, medium, or large."""
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    layers, hidden, heads, inter = _PRESETS[name]
    return EncoderConfig(num_layers=layers, hidden=hidden, num_heads=heads,
                         intermediate=inter, **overrides)


def count_parameters(config: EncoderConfig, input_len: int) -> int:
    """Closed-form used-parameter count at a given input length."""
    if input_len > config.max_input:
        raise ConfigError(f"input_len {input_len} exceeds max_input {config.max_input}")
    v, h, l, hi, i = (config.vocab_size, config.hidden, config.num_layers,
                      config.intermediate, input_len)
    return v * h + (2 + 3 * l) * i * h + i + (256 * 4 + 17 + 9 * l) * h + (1 + 2 * l * h) * hi


def parameter_inventory(config: EncoderConfig, input_len: int) -> list[tuple[str, tuple[int, ...]]]:
    """Named tensor shapes whose element sum reproduces ``count_parameters``.

    This is the accounting inventory, not the runtime weight layout: the
    published counting convention sizes the attention projections by input
    length, books a single shared intermediate bias, and skips the per-layer
    attention output kernel entirely, so it can only be walked as shape
    metadata.
    """
    v, h, hi, i = config.vocab_size, config.hidden, config.intermediate, input_len
    inv: list[tuple[str, tuple[int, ...]]] = [
        ("embeddings.word_embeddings", (v, h)),
        ("embeddings.position_embeddings", (i, h)),
        ("embeddings.token_type_embeddings.segment", (3, h)),
        ("embeddings.token_type_embeddings.binary", (2, h)),
        ("embeddings.token_type_embeddings.relation", (10, h)),
        ("embeddings.token_type_embeddings.column", (256, h)),
        ("embeddings.token_type_embeddings.row", (256, h)),
        ("embeddings.token_type_embeddings.rank", (256, h)),
        ("embeddings.token_type_embeddings.inv_rank", (256, h)),
        ("embeddings.LayerNorm.gain", (h,)),
        ("embeddings.LayerNorm.bias", (i,)),
        ("intermediate.dense.bias", (hi,)),
        ("pooler.dense.kernel", (i, h)),
        ("pooler.dense.bias", (h,)),
    ]
    for layer in range(config.num_layers):
        p = f"encoder.layer.{layer}."
        inv.extend([
            (p + "attention.self.query.kernel", (i, h)),
            (p + "attention.self.query.bias", (h,)),
            (p + "attention.self.key.kernel", (i, h)),
            (p + "attention.self.key.bias", (h,)),
            (p + "attention.self.value.kernel", (i, h)),
            (p + "attention.self.value.bias", (h,)),
            (p + "attention.output.dense.bias", (h,)),
            (p + "attention.output.LayerNorm.gain", (h,)),
            (p + "attention.output.LayerNorm.bias", (h,)),
            (p + "intermediate.dense.kernel", (h, hi)),
            (p + "output.dense.kernel", (hi, h)),
            (p + "output.dense.bias", (h,)),
            (p + "output.LayerNorm.gain", (h,)),
            (p + "output.LayerNorm.bias", (h,)),
        ])
    return inv


def shape_walk_count(config: EncoderConfig, input_len: int) -> int:
    """Independent counting path: sum of products over the inventory."""
    return sum(int(np.prod(shape)) for _, shape in parameter_inventory(config, input_len))


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02,
                     dtype=np.float32) -> np.ndarray:
    """Normal draws re-sampled until within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    for _ in range(16):
        bad = np.abs(out) > 2.0 * std
        if not bad.any():
            break
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
    return np.clip(out, -2.0 * std, 2.0 * std).astype(dtype)


@dataclass
class LayerWeights:
    wq: T.Tensor
    bq: T.Tensor
    wk: T.Tensor
    bk: T.Tensor
    wv: T.Tensor
    bv: T.Tensor
    wo: T.Tensor
    bo: T.Tensor
    ln1_gain: T.Tensor
    ln1_bias: T.Tensor
    w_inter: T.Tensor
    b_inter: T.Tensor
    w_out: T.Tensor
    b_out: T.Tensor
    ln2_gain: T.Tensor
    ln2_bias: T.Tensor


@dataclass
class EncoderWeights:
    """Runtime weights; see ``parameter_inventory`` for the counting view."""

    config: EncoderConfig
    word: T.Tensor
    position: T.Tensor
    type_segment: T.Tensor
    type_binary: T.Tensor
    type_relation: T.Tensor
    type_column: T.Tensor
    type_row: T.Tensor
    type_rank: T.Tensor
    type_inv_rank: T.Tensor
    emb_ln_gain: T.Tensor
    emb_ln_bias: T.Tensor
    layers: list[LayerWeights] = field(default_factory=list)
    pooler_w: T.Tensor | None = None
    pooler_b: T.Tensor | None = None

    def named_tensors(self) -> dict[str, T.Tensor]:
        out = {
            "word": self.word, "position": self.position,
            "type_segment": self.type_segment, "type_binary": self.type_binary,
            "type_relation": self.type_relation, "type_column": self.type_column,
            "type_row": self.type_row, "type_rank": self.type_rank,
            "type_inv_rank": self.type_inv_rank,
            "emb_ln_gain": self.emb_ln_gain, "emb_ln_bias": self.emb_ln_bias,
            "pooler_w": self.pooler_w, "pooler_b": self.pooler_b,
        }
        for i, lw in enumerate(self.layers):
            for name, t in vars(lw).items():
                out[f"layer{i}.{name}"] = t
        return out

    def parameters(self) -> list[T.Tensor]:
        return list(self.named_tensors().values())


def init_weights(config: EncoderConfig, dtype=np.float32) -> EncoderWeights:
    """Fresh weights: truncated normal (std 0.02), zero biases, unit gains."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    h, hi = config.hidden, config.intermediate

    def mat(*shape):
        return T.Tensor(truncated_normal(rng, shape, dtype=dtype), requires_grad=True)

    def zeros(*shape):
        return T.Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(*shape):
        return T.Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    layers = [
        LayerWeights(
            wq=mat(h, h), bq=zeros(h), wk=mat(h, h), bk=zeros(h),
            wv=mat(h, h), bv=zeros(h), wo=mat(h, h), bo=zeros(h),
            ln1_gain=ones(h), ln1_bias=zeros(h),
            w_inter=mat(h, hi), b_inter=zeros(hi),
            w_out=mat(hi, h), b_out=zeros(h),
            ln2_gain=ones(h), ln2_bias=zeros(h),
        )
        for _ in range(config.num_layers)
    ]
    return EncoderWeights(
        config=config,
        word=mat(config.vocab_size, h),
        position=mat(config.max_input, h),
        type_segment=mat(3, h), type_binary=mat(2, h), type_relation=mat(10, h),
        type_column=mat(256, h), type_row=mat(256, h), type_rank=mat(256, h),
        type_inv_rank=mat(256, h),
        emb_ln_gain=ones(h), emb_ln_bias=zeros(h),
        layers=layers,
        pooler_w=mat(h, h), pooler_b=zeros(h),
    )


def _validate_bias(bias: np.ndarray, n_keys: int) -> None:
    if bias.shape != (n_keys,):
        raise ContractError(f"bias length {bias.shape} != key count {n_keys}")
    finite = np.isfinite(bias)
    if (bias[finite] > 0).any():
        raise ContractError("attention bias entries must be <= 0 (log-probabilities)")
    if np.isnan(bias).any() or np.isposinf(bias).any():
        raise ContractError("attention bias must be <= 0 or -inf")


def biased_attention(q: T.Tensor, k: T.Tensor, v: T.Tensor,
                     bias: T.Tensor | np.ndarray | None,
                     mode: str = "key") -> T.Tensor:
    """Scaled dot-product attention with an additive per-token bias.

    ``q``, ``k``, ``v`` are (..., n, d) with matching leading dims; ``bias``
    is a length-n vector of values in (-inf, 0]. Rows that end up fully
    masked produce all-zero outputs rather than an error, which is the
    convention that makes a symmetric -inf bias equal to deleting tokens.
    """
    if mode not in BIAS_MODES:
        raise ContractError(f"unknown bias mode {mode!r}")
    d_k = q.shape[-1]
    scores = T.mul(T.matmul(q, T.permute(k, _swap_last_two(k))), 1.0 / math.sqrt(d_k))
    if bias is not None:
        bias_t = bias if isinstance(bias, T.Tensor) else T.Tensor(
            np.asarray(bias, dtype=scores.dtype))
        _validate_bias(bias_t.data, k.shape[-2])
        n = bias_t.data.shape[0]
        if mode in ("key", "symmetric"):
            scores = T.add(scores, T.reshape(bias_t, (1,) * (len(scores.shape) - 1) + (n,)))
        if mode in ("query", "symmetric"):
            scores = T.add(scores, T.reshape(bias_t, (1,) * (len(scores.shape) - 2) + (n, 1)))
    probs = T.softmax_rows(scores, on_empty="zeros")
    return T.matmul(probs, v)


def _swap_last_two(t: T.Tensor) -> tuple[int, ...]:
    axes = list(range(len(t.shape)))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _dropout(x: T.Tensor, rate: float, rng: np.random.Generator | None) -> T.Tensor:
    if rate <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return T.mul(x, T.Tensor(mask))


@dataclass
class ForwardTrace:
    """Optional per-layer attention probabilities captured during forward."""

    attention_probs: list[np.ndarray] = field(default_factory=list)


def _clip_ids(ids, cap=STRUCT_ID_CAP):
    return np.minimum(np.asarray(ids, dtype=np.int64), cap)


def embed(weights: EncoderWeights, seq: TokenizedSequence,
          train_rng: np.random.Generator | None = None) -> T.Tensor:
    """Sum word, position, and structural-type embeddings, then normalize."""
    cfg = weights.config
    positions = np.asarray(seq.effective_positions(), dtype=np.int64)
    if positions.size and positions.max() >= cfg.max_input:
        raise InputTooLongError(
            f"position id {positions.max()} exceeds max_input {cfg.max_input}")
    n = len(seq)
    zeros = np.zeros(n, dtype=np.int64)
    x = T.take_rows(weights.word, np.asarray(seq.token_ids, dtype=np.int64))
    x = T.add(x, T.take_rows(weights.position, positions))
    x = T.add(x, T.take_rows(weights.type_segment, np.asarray(seq.segment_ids)))
    x = T.add(x, T.take_rows(weights.type_column, _clip_ids(seq.column_ids)))
    x = T.add(x, T.take_rows(weights.type_row, _clip_ids(seq.row_ids)))
    x = T.add(x, T.take_rows(weights.type_rank, _clip_ids(seq.rank_ids)))
    # parity channels, fed their default row
    x = T.add(x, T.take_rows(weights.type_binary, zeros))
    x = T.add(x, T.take_rows(weights.type_relation, zeros))
    x = T.add(x, T.take_rows(weights.type_inv_rank, zeros))
    x = T.layer_norm(x, weights.emb_ln_gain, weights.emb_ln_bias)
    return _dropout(x, cfg.hidden_dropout, train_rng)


def forward(weights: EncoderWeights, seq: TokenizedSequence,
            bias: T.Tensor | np.ndarray | None = None, mode: str = "key",
            train_rng: np.random.Generator | None = None,
            trace: ForwardTrace | None = None) -> tuple[T.Tensor, T.Tensor]:
    """Run the encoder stack; returns (hidden states (n, H), pooled CLS (1, H)).

    ``bias`` applies in every layer. Pass ``train_rng`` to enable dropout
    with the config's rates; verification and evaluation leave it None.
    """
    cfg = weights.config
    n = len(seq)
    if n > cfg.max_input:
        raise InputTooLongError(f"sequence length {n} exceeds max_input {cfg.max_input}")
    if mode not in BIAS_MODES:
        raise ContractError(f"unknown bias mode {mode!r}")

    bias_t: T.Tensor | None = None
    if bias is not None:
        bias_t = bias if isinstance(bias, T.Tensor) else T.Tensor(np.asarray(bias))
        _validate_bias(bias_t.data, n)

    x = embed(weights, seq, train_rng)
    heads, d = cfg.num_heads, cfg.head_dim
    inv_sqrt_d = 1.0 / math.sqrt(d)

    def split_heads(t: T.Tensor) -> T.Tensor:
        return T.permute(T.reshape(t, (n, heads, d)), (1, 0, 2))

    for lw in weights.layers:
        q = split_heads(T.add(T.matmul(x, lw.wq), lw.bq))
        k = split_heads(T.add(T.matmul(x, lw.wk), lw.bk))
        v = split_heads(T.add(T.matmul(x, lw.wv), lw.bv))
        scores = T.mul(T.matmul(q, T.permute(k, (0, 2, 1))), inv_sqrt_d)
        if bias_t is not None:
            if mode in ("key", "symmetric"):
                scores = T.add(scores, T.reshape(bias_t, (1, 1, n)))
            if mode in ("query", "symmetric"):
                scores = T.add(scores, T.reshape(bias_t, (1, n, 1)))
        probs = T.softmax_rows(scores, on_empty="zeros")
        if trace is not None:
            trace.attention_probs.append(probs.data.copy())
        probs = _dropout(probs, cfg.attention_dropout, train_rng)
        ctx = T.reshape(T.permute(T.matmul(probs, v), (1, 0, 2)), (n, cfg.hidden))
        attn_out = _dropout(T.add(T.matmul(ctx, lw.wo), lw.bo), cfg.hidden_dropout,
                            train_rng)
        x = T.layer_norm(T.add(x, attn_out), lw.ln1_gain, lw.ln1_bias)
        ff = T.matmul(T.gelu(T.add(T.matmul(x, lw.w_inter), lw.b_inter)), lw.w_out)
        ff = _dropout(T.add(ff, lw.b_out), cfg.hidden_dropout, train_rng)
        x = T.layer_norm(T.add(x, ff), lw.ln2_gain, lw.ln2_bias)

    cls = T.take_rows(x, np.array([0]))
    pooled = T.tanh(T.add(T.matmul(cls, weights.pooler_w), weights.pooler_b))
    return x, pooled


def cast_weights(weights: EncoderWeights, dtype) -> EncoderWeights:
    """Copy of the weights in another precision (for dual-precision checks)."""

    def cast(t: T.Tensor) -> T.Tensor:
        return T.Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)

    layers = [LayerWeights(**{k: cast(v) for k, v in vars(lw).items()})
              for lw in weights.layers]
    fields = {k: cast(v) for k, v in vars(weights).items()
              if isinstance(v, T.Tensor)}
    return replace(weights, layers=layers, **fields)
