"""Sequence models over frame vectors: transformer and attentional GRU.

Both models share the conv frame encoder and the token embedding, consume
teacher-forced target prefixes during training, and expose an incremental
decoding interface with cached attention state for generation. Checkpoints
are a small binary container: magic, version, a JSON metadata header, then
raw little-endian parameter payloads in header order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import nn
from .codec import VOCAB_SIZE, CodecConfig
from .tensor import (ShapeError, Tensor, concat, dropout, matmul, new_rng,
                     no_grad, reshape)

FRAMES_PER_CLIP = 40
MODEL_KINDS = ("vmt", "seq2seq")
CROSS_MODES = ("standard", "paper_literal")

CHECKPOINT_MAGIC = b"VMTC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "vmt"
    hidden: int = 512
    enc_layers: int = 6
    dec_layers: int = 6
    heads: int = 8
    d_ff: int = 2048
    dropout: float = 0.1
    max_target_len: int = 1024
    cross_attention_mode: str = "standard"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.cross_attention_mode not in CROSS_MODES:
            raise ValueError(
                f"unknown cross-attention mode {self.cross_attention_mode!r}")
        if self.hidden % 8 != 0:
            raise ValueError(f"hidden must be divisible by 8, got {self.hidden}")
        if self.hidden % self.heads != 0:
            raise ValueError(
                f"hidden {self.hidden} not divisible by {self.heads} heads")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ValueError("layer counts must be positive")
        if self.kind == "seq2seq" and self.enc_layers != self.dec_layers:
            raise ValueError("seq2seq shares one GRU stack; encoder and "
                             "decoder layer counts must match")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_target_len < 1:
            raise ValueError("max_target_len must be positive")

    @classmethod
    def vmt_full(cls) -> "ModelConfig":
        return cls(kind="vmt")

    @classmethod
    def seq2seq_full(cls) -> "ModelConfig":
        return cls(kind="seq2seq", enc_layers=3, dec_layers=3)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config fields: {sorted(extra)}")
        return cls(**d)


def _dropout_rng(train: bool, rate: float, rng) -> np.random.Generator | None:
    if not train or rate == 0.0:
        return None
    if rng is None:
        raise ValueError("training with dropout needs an rng")
    return rng


class _Residual:
    """Post-norm residual wrapper: y = LN(x + dropout(sub(x)))."""

    def __init__(self, rate: float):
        self.rate = rate

    def __call__(self, x: Tensor, sub_out: Tensor, ln: nn.LayerNormParams,
                 rng) -> Tensor:
        if rng is not None:
            sub_out = dropout(sub_out, self.rate, rng)
        return nn.layer_norm(x + sub_out, ln)


@dataclass
class _EncoderLayer:
    self_attn: nn.AttentionParams
    ln1: nn.LayerNormParams
    ffn: nn.FfnParams
    ln2: nn.LayerNormParams


@dataclass
class _DecoderLayer:
    self_attn: nn.AttentionParams
    ln1: nn.LayerNormParams
    cross_attn: nn.AttentionParams
    ln2: nn.LayerNormParams
    ffn: nn.FfnParams
    ln3: nn.LayerNormParams


class VmtModel:
    """Transformer encoder-decoder from frame vectors to event logits."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        if config.kind != "vmt":
            raise ValueError(f"VmtModel needs kind='vmt', got {config.kind!r}")
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        h = config.hidden
        rng = new_rng((seed, 0))
        self.conv = nn.ConvEncoderParams.init(rng, h, dtype=dtype)
        self.embed = nn.EmbeddingParams.init(rng, h, VOCAB_SIZE, dtype=dtype)
        self.enc_layers = [
            _EncoderLayer(
                self_attn=nn.AttentionParams.init(rng, h, dtype=dtype),
                ln1=nn.LayerNormParams.init(h, dtype=dtype),
                ffn=nn.FfnParams.init(rng, h, config.d_ff, dtype=dtype),
                ln2=nn.LayerNormParams.init(h, dtype=dtype))
            for _ in range(config.enc_layers)]
        self.dec_layers = [
            _DecoderLayer(
                self_attn=nn.AttentionParams.init(rng, h, dtype=dtype),
                ln1=nn.LayerNormParams.init(h, dtype=dtype),
                cross_attn=nn.AttentionParams.init(rng, h, dtype=dtype),
                ln2=nn.LayerNormParams.init(h, dtype=dtype),
                ffn=nn.FfnParams.init(rng, h, config.d_ff, dtype=dtype),
                ln3=nn.LayerNormParams.init(h, dtype=dtype))
            for _ in range(config.dec_layers)]
        self.out_w = Tensor(nn.xavier_uniform(rng, (h, VOCAB_SIZE), h,
                                              VOCAB_SIZE, dtype=dtype),
                            requires_grad=True)
        self.out_b = Tensor(np.zeros(VOCAB_SIZE, dtype=dtype),
                            requires_grad=True)
        pe_len = max(FRAMES_PER_CLIP, config.max_target_len + 1)
        self.pe = nn.positional_encoding(pe_len, h, dtype=dtype)
        self._residual = _Residual(config.dropout)

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.conv.layers):
            out[f"conv.{i}.kernel"] = layer.kernel
            out[f"conv.{i}.ln_gain"] = layer.ln_gain
            out[f"conv.{i}.ln_bias"] = layer.ln_bias
        out["embed.table"] = self.embed.table

        def attn(prefix, p):
            out[f"{prefix}.w_q"] = p.w_q
            out[f"{prefix}.w_k"] = p.w_k
            out[f"{prefix}.w_v"] = p.w_v
            out[f"{prefix}.w_o"] = p.w_o

        def norm(prefix, p):
            out[f"{prefix}.gain"] = p.gain
            out[f"{prefix}.bias"] = p.bias

        def ffn(prefix, p):
            out[f"{prefix}.w1"] = p.w1
            out[f"{prefix}.b1"] = p.b1
            out[f"{prefix}.w2"] = p.w2
            out[f"{prefix}.b2"] = p.b2

        for i, layer in enumerate(self.enc_layers):
            attn(f"enc.{i}.self_attn", layer.self_attn)
            norm(f"enc.{i}.ln1", layer.ln1)
            ffn(f"enc.{i}.ffn", layer.ffn)
            norm(f"enc.{i}.ln2", layer.ln2)
        for i, layer in enumerate(self.dec_layers):
            attn(f"dec.{i}.self_attn", layer.self_attn)
            norm(f"dec.{i}.ln1", layer.ln1)
            attn(f"dec.{i}.cross_attn", layer.cross_attn)
            norm(f"dec.{i}.ln2", layer.ln2)
            ffn(f"dec.{i}.ffn", layer.ffn)
            norm(f"dec.{i}.ln3", layer.ln3)
        out["out.w"] = self.out_w
        out["out.b"] = self.out_b
        return out

    def encode_frames(self, clips: Tensor) -> Tensor:
        """Conv-encode normalized clips [B, T, 3, h, w] to vectors [B, T, H]."""
        self._check_dtype(clips)
        return nn.conv_frame_encode(clips, self.conv)

    def encode(self, frame_vecs: Tensor, train: bool = False,
               rng=None) -> Tensor:
        """Run the encoder stack over frame vectors [B, S, H]."""
        drop_rng = _dropout_rng(train, self.config.dropout, rng)
        s = frame_vecs.shape[1]
        x = frame_vecs + self.pe[:s]
        for layer in self.enc_layers:
            attn_out = nn.self_attention(x, layer.self_attn, self.config.heads)
            x = self._residual(x, attn_out, layer.ln1, drop_rng)
            x = self._residual(x, nn.ffn(x, layer.ffn), layer.ln2, drop_rng)
        return x

    def decode(self, z_enc: Tensor, target_in: np.ndarray, train: bool = False,
               rng=None) -> Tensor:
        """Teacher-forced decoder: tokens [B, T] -> logits [B, T, vocab]."""
        drop_rng = _dropout_rng(train, self.config.dropout, rng)
        t = target_in.shape[1]
        if t > self.config.max_target_len + 1:
            raise ShapeError(f"decoder input length {t} exceeds "
                             f"{self.config.max_target_len + 1}")
        x = nn.embed(target_in, self.embed) + self.pe[:t]
        mask = nn.causal_mask(t, self.dtype)
        mode = self.config.cross_attention_mode
        for layer in self.dec_layers:
            self_out = nn.self_attention(x, layer.self_attn, self.config.heads,
                                         mask=mask)
            x = self._residual(x, self_out, layer.ln1, drop_rng)
            cross_out = nn.cross_attention(x, z_enc, layer.cross_attn,
                                           self.config.heads, mode=mode)
            x = self._residual(x, cross_out, layer.ln2, drop_rng)
            x = self._residual(x, nn.ffn(x, layer.ffn), layer.ln3, drop_rng)
        return matmul(x, self.out_w) + self.out_b

    def forward(self, clips: Tensor, target_in: np.ndarray, train: bool = False,
                rng=None) -> Tensor:
        """Full pass: clips [B, T, 3, h, w] + token prefix -> logits."""
        z = self.encode(self.encode_frames(clips), train=train, rng=rng)
        return self.decode(z, target_in, train=train, rng=rng)

    def _check_dtype(self, x: Tensor) -> None:
        if x.dtype != self.dtype:
            raise TypeError(f"model is {self.dtype}, input is {x.dtype}")

    # -- incremental decoding ------------------------------------------------

    def begin_decode(self, z_enc: Tensor) -> "VmtDecodeState":
        """Prepare cached state for one clip's encoder output [1, S, H]."""
        if z_enc.ndim != 3 or z_enc.shape[0] != 1:
            raise ShapeError(f"expected [1, S, H] encoder output, got {z_enc.shape}")
        heads = self.config.heads
        mode = self.config.cross_attention_mode
        cross = []
        with no_grad():
            for layer in self.dec_layers:
                p = layer.cross_attn
                k_w, v_w = ((p.w_k, p.w_v) if mode == "standard"
                            else (p.w_q, p.w_k))
                k = nn.split_heads(matmul(z_enc, k_w), heads)
                v = nn.split_heads(matmul(z_enc, v_w), heads)
                cross.append((k, v))
        max_len = self.config.max_target_len + 1
        d_k = self.config.hidden // heads
        caches = [(np.zeros((1, heads, max_len, d_k), dtype=self.dtype),
                   np.zeros((1, heads, max_len, d_k), dtype=self.dtype))
                  for _ in self.dec_layers]
        return VmtDecodeState(cross_kv=cross, self_kv=caches, pos=0)

    def decode_step(self, state: "VmtDecodeState", token_id: int) -> np.ndarray:
        """Feed one token, return the next-token logits [vocab]."""
        t = state.pos
        if t >= self.config.max_target_len + 1:
            raise ShapeError("decoder cache is full")
        heads = self.config.heads
        mode = self.config.cross_attention_mode
        with no_grad():
            x = nn.embed(np.array([[token_id]]), self.embed) + self.pe[t:t + 1]
            for layer, (ck, cv), (bk, bv) in zip(self.dec_layers,
                                                 state.cross_kv, state.self_kv):
                p = layer.self_attn
                q = nn.split_heads(matmul(x, p.w_q), heads)
                bk[:, :, t] = nn.split_heads(matmul(x, p.w_k), heads).numpy()[:, :, 0]
                bv[:, :, t] = nn.split_heads(matmul(x, p.w_v), heads).numpy()[:, :, 0]
                attn = nn.scaled_dot_attention(q, Tensor(bk[:, :, :t + 1]),
                                               Tensor(bv[:, :, :t + 1]))
                x = nn.layer_norm(x + matmul(nn.merge_heads(attn), p.w_o),
                                  layer.ln1)
                cp = layer.cross_attn
                q_w = cp.w_q if mode == "standard" else cp.w_v
                q = nn.split_heads(matmul(x, q_w), heads)
                attn = nn.scaled_dot_attention(q, ck, cv)
                x = nn.layer_norm(x + matmul(nn.merge_heads(attn), cp.w_o),
                                  layer.ln2)
                x = nn.layer_norm(x + nn.ffn(x, layer.ffn), layer.ln3)
            logits = matmul(x, self.out_w) + self.out_b
        state.pos = t + 1
        return logits.numpy()[0, 0]


@dataclass
class VmtDecodeState:
    cross_kv: list[tuple[Tensor, Tensor]]
    self_kv: list[tuple[np.ndarray, np.ndarray]]
    pos: int


class Seq2SeqModel:
    """GRU encoder-decoder with attention; one stack serves both sides.

    The encoder runs the shared cells over the 40 frame vectors; the decoder
    continues from the final encoder hidden state, attending back over the
    encoder outputs. Each step projects [embedding; context] down to the
    hidden size as the first-layer input.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        if config.kind != "seq2seq":
            raise ValueError(
                f"Seq2SeqModel needs kind='seq2seq', got {config.kind!r}")
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        h = config.hidden
        rng = new_rng((seed, 0))
        self.conv = nn.ConvEncoderParams.init(rng, h, dtype=dtype)
        self.embed = nn.EmbeddingParams.init(rng, h, VOCAB_SIZE, dtype=dtype)
        # one parameter set per layer, used by encoder and decoder alike
        self.cells = [nn.GruCellParams.init(rng, h, h, dtype=dtype)
                      for _ in range(config.enc_layers)]
        self.attn = nn.AttentionParams.init(rng, h, dtype=dtype)
        self.ctx_w = Tensor(nn.xavier_uniform(rng, (2 * h, h), 2 * h, h,
                                              dtype=dtype), requires_grad=True)
        self.ctx_b = Tensor(np.zeros(h, dtype=dtype), requires_grad=True)
        self.out_w = Tensor(nn.xavier_uniform(rng, (h, VOCAB_SIZE), h,
                                              VOCAB_SIZE, dtype=dtype),
                            requires_grad=True)
        self.out_b = Tensor(np.zeros(VOCAB_SIZE, dtype=dtype),
                            requires_grad=True)

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.conv.layers):
            out[f"conv.{i}.kernel"] = layer.kernel
            out[f"conv.{i}.ln_gain"] = layer.ln_gain
            out[f"conv.{i}.ln_bias"] = layer.ln_bias
        out["embed.table"] = self.embed.table
        for i, cell in enumerate(self.cells):
            for f in fields(cell):
                out[f"gru.{i}.{f.name}"] = getattr(cell, f.name)
        out["attn.w_q"] = self.attn.w_q
        out["attn.w_k"] = self.attn.w_k
        out["attn.w_v"] = self.attn.w_v
        out["attn.w_o"] = self.attn.w_o
        out["ctx.w"] = self.ctx_w
        out["ctx.b"] = self.ctx_b
        out["out.w"] = self.out_w
        out["out.b"] = self.out_b
        return out

    def encode_frames(self, clips: Tensor) -> Tensor:
        if clips.dtype != self.dtype:
            raise TypeError(f"model is {self.dtype}, input is {clips.dtype}")
        return nn.conv_frame_encode(clips, self.conv)

    def _run_stack(self, x: Tensor, hs: list[Tensor], drop_rng) -> Tensor:
        """Advance every layer one step in place; returns the top output."""
        inp = x
        last = len(self.cells) - 1
        for l, cell in enumerate(self.cells):
            hs[l] = nn.gru_cell(inp, hs[l], cell)
            inp = hs[l]
            if drop_rng is not None and l < last:
                inp = dropout(inp, self.config.dropout, drop_rng)
        return hs[last]

    def encode(self, frame_vecs: Tensor, train: bool = False,
               rng=None) -> tuple[Tensor, list[Tensor]]:
        """Returns (encoder outputs [B, S, H], final hidden states per layer)."""
        drop_rng = _dropout_rng(train, self.config.dropout, rng)
        b, s, h = frame_vecs.shape
        hs: list[Tensor] = [Tensor(np.zeros((b, h), dtype=self.dtype))
                            for _ in self.cells]
        outs = []
        for t in range(s):
            top = self._run_stack(frame_vecs[:, t], hs, drop_rng)
            outs.append(reshape(top, (b, 1, h)))
        return concat(outs, axis=1), hs

    def decode(self, enc_out: Tensor, hs: list[Tensor], target_in: np.ndarray,
               train: bool = False, rng=None) -> Tensor:
        """Teacher-forced decode from the encoder's final hidden states."""
        drop_rng = _dropout_rng(train, self.config.dropout, rng)
        b, t_len = target_in.shape
        if t_len > self.config.max_target_len + 1:
            raise ShapeError(f"decoder input length {t_len} exceeds "
                             f"{self.config.max_target_len + 1}")
        h = self.config.hidden
        hs = list(hs)
        tops = []
        for t in range(t_len):
            emb = nn.embed(target_in[:, t], self.embed)
            query = reshape(hs[-1], (b, 1, h))
            ctx = nn.cross_attention(query, enc_out, self.attn,
                                     self.config.heads,
                                     mode=self.config.cross_attention_mode)
            x = matmul(concat([emb, reshape(ctx, (b, h))], axis=1),
                       self.ctx_w) + self.ctx_b
            top = self._run_stack(x, hs, drop_rng)
            tops.append(reshape(top, (b, 1, h)))
        return matmul(concat(tops, axis=1), self.out_w) + self.out_b

    def forward(self, clips: Tensor, target_in: np.ndarray, train: bool = False,
                rng=None) -> Tensor:
        enc_out, hs = self.encode(self.encode_frames(clips), train=train,
                                  rng=rng)
        return self.decode(enc_out, hs, target_in, train=train, rng=rng)

    # -- incremental decoding ------------------------------------------------

    def begin_decode(self, enc_state) -> "Seq2SeqDecodeState":
        """Seed decoding from ``encode`` output for a single clip (B=1)."""
        enc_out, hs = enc_state
        if enc_out.shape[0] != 1:
            raise ShapeError(f"expected batch size 1, got {enc_out.shape}")
        return Seq2SeqDecodeState(enc_out=enc_out.detach(),
                                  hs=[h.detach() for h in hs])

    def decode_step(self, state: "Seq2SeqDecodeState", token_id: int) -> np.ndarray:
        h = self.config.hidden
        with no_grad():
            emb = nn.embed(np.array([token_id]), self.embed)
            query = reshape(state.hs[-1], (1, 1, h))
            ctx = nn.cross_attention(query, state.enc_out, self.attn,
                                     self.config.heads,
                                     mode=self.config.cross_attention_mode)
            x = matmul(concat([emb, reshape(ctx, (1, h))], axis=1),
                       self.ctx_w) + self.ctx_b
            top = self._run_stack(x, state.hs, None)
            logits = matmul(top, self.out_w) + self.out_b
        return logits.numpy()[0]


@dataclass
class Seq2SeqDecodeState:
    enc_out: Tensor
    hs: list[Tensor]


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32):
    if config.kind == "vmt":
        return VmtModel(config, seed=seed, dtype=dtype)
    return Seq2SeqModel(config, seed=seed, dtype=dtype)


def param_count(model) -> int:
    return sum(int(np.prod(p.shape)) for p in model.named_params().values())


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(model, path, adam: dict | None = None,
                    codec_config: CodecConfig | None = None) -> None:
    """Write model (and optional Adam moments) to ``path``.

    ``adam``, when given, is {"step": int, "m": {name: array},
    "v": {name: array}} keyed exactly like ``named_params``.
    """
    params = model.named_params()
    codec = codec_config or CodecConfig()
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "seed": model.seed,
        "dtype": model.dtype.name,
        "codec": {"time_shift_ms": codec.time_shift_ms,
                  "clip_len_sec": codec.clip_len_sec},
        "params": [{"name": n, "shape": list(p.shape)}
                   for n, p in params.items()],
        "adam_step": None if adam is None else int(adam["step"]),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    le = model.dtype.newbyteorder("<")
    chunks = [CHECKPOINT_MAGIC, bytes([CHECKPOINT_VERSION]),
              struct.pack("<I", len(blob)), blob]
    chunks.extend(p.numpy().astype(le).tobytes() for p in params.values())
    if adam is not None:
        for store in ("m", "v"):
            missing = [n for n in params if n not in adam[store]]
            if missing:
                raise ValueError(f"adam {store} missing {missing[0]!r}")
            chunks.extend(adam[store][n].astype(le).tobytes() for n in params)
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path):
    """Read a checkpoint: returns (model, adam_or_None, CodecConfig)."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version = raw[4]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {version}, "
                         f"expected {CHECKPOINT_VERSION}")
    (hlen,) = struct.unpack_from("<I", raw, 5)
    header = json.loads(raw[9:9 + hlen])
    if header["version"] != version:
        raise ValueError(f"{path}: header version {header['version']} "
                         f"disagrees with container byte {version}")
    config = ModelConfig.from_dict(header["config"])
    dtype = np.dtype(header["dtype"])
    model = build_model(config, seed=header["seed"], dtype=dtype)
    params = model.named_params()

    stored = {entry["name"]: tuple(entry["shape"]) for entry in header["params"]}
    for name in params:
        if name not in stored:
            raise ValueError(f"{path}: missing parameter {name!r}")
    for name in stored:
        if name not in params:
            raise ValueError(f"{path}: unknown parameter {name!r}")
    for name, p in params.items():
        if stored[name] != p.shape:
            raise ValueError(f"{path}: parameter {name!r} has shape "
                             f"{list(stored[name])}, expected {list(p.shape)}")

    le = dtype.newbyteorder("<")
    offset = 9 + hlen

    def take(shape) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise ValueError(f"{path}: truncated payload")
        arr = np.frombuffer(raw, dtype=le, count=count, offset=offset)
        offset += nbytes
        return arr.astype(dtype).reshape(shape)

    order = [entry["name"] for entry in header["params"]]
    loaded = {name: take(stored[name]) for name in order}
    for name, p in params.items():
        p.data[...] = loaded[name]

    adam = None
    if header["adam_step"] is not None:
        adam = {"step": header["adam_step"],
                "m": {name: take(stored[name]) for name in order},
                "v": {name: take(stored[name]) for name in order}}
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    codec = CodecConfig(**header["codec"])
    return model, adam, codec
