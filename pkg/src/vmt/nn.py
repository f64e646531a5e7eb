"""Neural net building blocks: conv frame encoder, GRU cell, attention, FFN.

Everything here is a pure function over explicit parameter dataclasses; there
is no module/forward object protocol. Parameters are created by the ``init``
classmethods from a caller-supplied Generator so that construction order is
the only thing that determines the draw sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .tensor import (ShapeError, Tensor, conv2d, dropout, embedding,
                     global_avg_pool, layer_norm as _layer_norm_op, leaky_relu,
                     matmul, relu, reshape, scale, sigmoid, softmax, tanh,
                     transpose)

LEAKY_SLOPE = 0.01
CONV_KERNEL = 4
CONV_STRIDE = 2
CONV_PADDING = 1
NUM_CONV_LAYERS = 3


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int,
                   dtype=np.float32) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def conv_channel_plan(hidden: int) -> tuple[int, ...]:
    """Output channels per conv layer: (hidden/8) * 2^(i*(i+1)/2).

    For hidden=512 this is (64, 128, 512); the last layer always lands on
    ``hidden`` so global average pooling yields one hidden-sized vector.
    """
    if hidden % 8 != 0:
        raise ValueError(f"hidden size must be divisible by 8, got {hidden}")
    base = hidden // 8
    return tuple(base * 2 ** (i * (i + 1) // 2) for i in range(NUM_CONV_LAYERS))


@dataclass
class ConvLayerParams:
    kernel: Tensor  # [out_ch, in_ch, 4, 4]
    ln_gain: Tensor  # [out_ch]
    ln_bias: Tensor  # [out_ch]


@dataclass
class ConvEncoderParams:
    layers: list[ConvLayerParams]

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int,
             dtype=np.float32) -> "ConvEncoderParams":
        plan = conv_channel_plan(hidden)
        layers = []
        in_ch = 3
        for out_ch in plan:
            k = CONV_KERNEL
            kernel = xavier_uniform(rng, (out_ch, in_ch, k, k),
                                    fan_in=in_ch * k * k, fan_out=out_ch * k * k,
                                    dtype=dtype)
            layers.append(ConvLayerParams(
                kernel=Tensor(kernel, requires_grad=True),
                ln_gain=Tensor(np.ones(out_ch, dtype=dtype), requires_grad=True),
                ln_bias=Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True),
            ))
            in_ch = out_ch
        return cls(layers=layers)


def conv_frame_encode(frames: Tensor, params: ConvEncoderParams) -> Tensor:
    """Encode frames [T, 3, h, w] (or [B, T, 3, h, w]) to vectors [T, H].

    Each layer is stride-2 conv, LeakyReLU, then layer norm over the channel
    axis; global average pooling collapses whatever spatial extent is left.
    """
    batched = frames.ndim == 5
    if not batched and frames.ndim != 4:
        raise ShapeError(f"expected 4-d or 5-d frame tensor, got {frames.shape}")
    if frames.shape[-3] != 3:
        raise ShapeError(f"expected 3 input channels, got {frames.shape}")
    x = frames
    if batched:
        b, t = frames.shape[:2]
        x = reshape(x, (b * t,) + frames.shape[2:])
    for layer in params.layers:
        x = conv2d(x, layer.kernel, stride=CONV_STRIDE, padding=CONV_PADDING)
        x = leaky_relu(x, LEAKY_SLOPE)
        x = _layer_norm_op(x, layer.ln_gain, layer.ln_bias, axis=1)
    x = global_avg_pool(x)
    if batched:
        x = reshape(x, (b, t, x.shape[-1]))
    return x


@dataclass
class GruCellParams:
    """Gate weights are stored [hidden, input] / [hidden, hidden], row-major
    per output unit; ``gru_cell`` applies their transposes."""

    w_ir: Tensor
    w_iz: Tensor
    w_in: Tensor
    w_hr: Tensor
    w_hz: Tensor
    w_hn: Tensor
    b_ir: Tensor
    b_iz: Tensor
    b_in: Tensor
    b_hr: Tensor
    b_hz: Tensor
    b_hn: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, input_size: int,
             dtype=np.float32) -> "GruCellParams":
        def w(rows, cols):
            return Tensor(xavier_uniform(rng, (rows, cols), fan_in=cols,
                                         fan_out=rows, dtype=dtype),
                          requires_grad=True)

        def b():
            return Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)

        return cls(
            w_ir=w(hidden, input_size), w_iz=w(hidden, input_size),
            w_in=w(hidden, input_size), w_hr=w(hidden, hidden),
            w_hz=w(hidden, hidden), w_hn=w(hidden, hidden),
            b_ir=b(), b_iz=b(), b_in=b(), b_hr=b(), b_hz=b(), b_hn=b(),
        )


def gru_cell(x: Tensor, h_prev: Tensor, params: GruCellParams) -> Tensor:
    """One GRU step: x [B, in], h_prev [B, H] -> h [B, H].

    r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h = (1 - z) * n + z * h
    """
    p = params
    r = sigmoid(matmul(x, transpose(p.w_ir)) + p.b_ir
                    + matmul(h_prev, transpose(p.w_hr)) + p.b_hr)
    z = sigmoid(matmul(x, transpose(p.w_iz)) + p.b_iz
                    + matmul(h_prev, transpose(p.w_hz)) + p.b_hz)
    n = tanh(matmul(x, transpose(p.w_in)) + p.b_in
                 + r * (matmul(h_prev, transpose(p.w_hn)) + p.b_hn))
    return (1.0 - z) * n + z * h_prev


def positional_encoding(length: int, hidden: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal table [length, hidden]; pairs (2i, 2i+1) share the
    frequency 10000^(-2i/hidden) as sin/cos."""
    if hidden % 2 != 0:
        raise ValueError(f"hidden size must be even, got {hidden}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(hidden // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / hidden)
    pe = np.empty((length, hidden), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype)


def causal_mask(size: int, dtype=np.float32) -> np.ndarray:
    """[size, size] additive mask: 0 on and below the diagonal, -inf above."""
    mask = np.zeros((size, size), dtype=dtype)
    mask[np.triu_indices(size, k=1)] = -np.inf
    return mask


@dataclass
class AttentionParams:
    """Projections stored as single [H, H] matrices; head i owns the
    column block [i*d_k, (i+1)*d_k)."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int,
             dtype=np.float32) -> "AttentionParams":
        def w():
            return Tensor(xavier_uniform(rng, (hidden, hidden), fan_in=hidden,
                                         fan_out=hidden, dtype=dtype),
                          requires_grad=True)

        return cls(w_q=w(), w_k=w(), w_v=w(), w_o=w())


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[B, T, H] -> [B, heads, T, H/heads]."""
    b, t, h = x.shape
    if h % heads != 0:
        raise ShapeError(f"hidden {h} not divisible by {heads} heads")
    x = reshape(x, (b, t, heads, h // heads))
    return transpose(x, (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """[B, heads, T, d_k] -> [B, T, heads*d_k]."""
    b, heads, t, dk = x.shape
    x = transpose(x, (0, 2, 1, 3))
    return reshape(x, (b, t, heads * dk))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         mask: np.ndarray | None = None,
                         dropout_rate: float = 0.0,
                         rng: np.random.Generator | None = None) -> Tensor:
    """softmax(q kᵀ / sqrt(d_k) + mask) v over the last two axes.

    ``mask`` is additive (0 = keep, -inf = block) and must broadcast to the
    score shape. Dropout, when active, is applied to the attention weights.
    """
    d_k = q.shape[-1]
    scores = scale(matmul(q, transpose(k, _swap_last(k.ndim))),
                       1.0 / math.sqrt(d_k))
    if mask is not None:
        scores = scores + mask.astype(scores.dtype)
    weights = softmax(scores, axis=-1)
    if dropout_rate > 0.0:
        weights = dropout(weights, dropout_rate, rng)
    return matmul(weights, v)


def _swap_last(ndim: int) -> tuple[int, ...]:
    perm = list(range(ndim))
    perm[-1], perm[-2] = perm[-2], perm[-1]
    return tuple(perm)


def _attend(q_in: Tensor, k_in: Tensor, v_in: Tensor, params: AttentionParams,
            heads: int, mask, dropout_rate, rng) -> Tensor:
    q = split_heads(matmul(q_in, params.w_q), heads)
    k = split_heads(matmul(k_in, params.w_k), heads)
    v = split_heads(matmul(v_in, params.w_v), heads)
    out = scaled_dot_attention(q, k, v, mask=mask, dropout_rate=dropout_rate,
                               rng=rng)
    return matmul(merge_heads(out), params.w_o)


def self_attention(x: Tensor, params: AttentionParams, heads: int,
                   mask: np.ndarray | None = None, dropout_rate: float = 0.0,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Multi-head self-attention over x [B, T, H]."""
    return _attend(x, x, x, params, heads, mask, dropout_rate, rng)


def cross_attention(dec: Tensor, enc: Tensor, params: AttentionParams,
                    heads: int, mode: str = "standard",
                    dropout_rate: float = 0.0,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Decoder-to-encoder attention, dec [B, Tq, H] x enc [B, Tk, H].

    "standard" projects queries from the decoder with W_q and keys/values
    from the encoder with W_k/W_v. "paper_literal" rotates the assignment:
    queries = dec W_v, keys = enc W_q, values = enc W_k. Both keep W_o on
    the output.
    """
    if mode == "standard":
        q_w, k_w, v_w = params.w_q, params.w_k, params.w_v
    elif mode == "paper_literal":
        q_w, k_w, v_w = params.w_v, params.w_q, params.w_k
    else:
        raise ValueError(f"unknown cross-attention mode {mode!r}")
    q = split_heads(matmul(dec, q_w), heads)
    k = split_heads(matmul(enc, k_w), heads)
    v = split_heads(matmul(enc, v_w), heads)
    out = scaled_dot_attention(q, k, v, dropout_rate=dropout_rate, rng=rng)
    return matmul(merge_heads(out), params.w_o)


@dataclass
class FfnParams:
    w1: Tensor  # [H, d_ff]
    b1: Tensor
    w2: Tensor  # [d_ff, H]
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, d_ff: int,
             dtype=np.float32) -> "FfnParams":
        return cls(
            w1=Tensor(xavier_uniform(rng, (hidden, d_ff), hidden, d_ff,
                                     dtype=dtype), requires_grad=True),
            b1=Tensor(np.zeros(d_ff, dtype=dtype), requires_grad=True),
            w2=Tensor(xavier_uniform(rng, (d_ff, hidden), d_ff, hidden,
                                     dtype=dtype), requires_grad=True),
            b2=Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True),
        )


def ffn(x: Tensor, params: FfnParams) -> Tensor:
    """relu(x W1 + b1) W2 + b2, applied position-wise."""
    hidden = relu(matmul(x, params.w1) + params.b1)
    return matmul(hidden, params.w2) + params.b2


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, hidden: int, dtype=np.float32) -> "LayerNormParams":
        return cls(gain=Tensor(np.ones(hidden, dtype=dtype), requires_grad=True),
                   bias=Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True))


def layer_norm(x: Tensor, params: LayerNormParams) -> Tensor:
    return _layer_norm_op(x, params.gain, params.bias, axis=-1)


@dataclass
class EmbeddingParams:
    table: Tensor  # [H, vocab]; tokens select columns

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, vocab: int,
             dtype=np.float32) -> "EmbeddingParams":
        return cls(table=Tensor(xavier_uniform(rng, (hidden, vocab),
                                               fan_in=vocab, fan_out=hidden,
                                               dtype=dtype),
                                requires_grad=True))


def embed(token_ids: np.ndarray, params: EmbeddingParams) -> Tensor:
    """Look up token ids [...] as vectors [..., H]; no scaling."""
    return embedding(params.table, token_ids)


def param_tensors(params) -> list[Tensor]:
    """Flatten a parameter dataclass (possibly nested in lists) to tensors."""
    if isinstance(params, Tensor):
        return [params]
    if isinstance(params, (list, tuple)):
        out = []
        for item in params:
            out.extend(param_tensors(item))
        return out
    out = []
    for f in fields(params):
        out.extend(param_tensors(getattr(params, f.name)))
    return out
