"""Training: warmup/decay schedule, Adam, masked NLL, JSONL metrics, resume.

Each step re-derives its dropout stream from (seed, step), so a run resumed
from a checkpoint replays the exact bit pattern of an uninterrupted one.
Metrics are appended one JSON object per line as the run progresses; a
non-finite loss aborts the run while keeping the last checkpoint on disk.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import CodecConfig
from .data import Manifest, batch_iter, batches_per_epoch, normalize_batch
from .models import save_checkpoint
from .tensor import (Tensor, log_softmax, new_rng, no_grad, reduce_sum,
                     take_along_last)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.997
ADAM_EPS = 1e-9

CHECKPOINT_NAME = "last.ckpt"
METRICS_NAME = "metrics.jsonl"


class NumericError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int = 4
    seed: int = 0
    peak_lr: float = 1e-3
    warmup_steps: int = 8000
    eval_every: int = 0
    checkpoint_every: int = 0
    stop_below_loss: float | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be positive")
        if self.eval_every < 0 or self.checkpoint_every < 0:
            raise ValueError("intervals must be >= 0 (0 disables)")


def lr_schedule(step: int, peak_lr: float = 1e-3,
                warmup_steps: int = 8000) -> float:
    """Linear warmup to ``peak_lr``, then inverse square-root decay.

    The two branches meet exactly at step == warmup_steps.
    """
    if step < 1:
        raise ValueError(f"steps are 1-based, got {step}")
    if step <= warmup_steps:
        return peak_lr * step / warmup_steps
    return peak_lr * math.sqrt(warmup_steps / step)


class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    def __init__(self, params: dict[str, Tensor]):
        self.step = 0
        self.m = {n: np.zeros(p.shape, dtype=p.dtype) for n, p in params.items()}
        self.v = {n: np.zeros(p.shape, dtype=p.dtype) for n, p in params.items()}

    def to_dict(self) -> dict:
        return {"step": self.step, "m": self.m, "v": self.v}

    @classmethod
    def from_dict(cls, params: dict[str, Tensor], d: dict) -> "AdamState":
        state = cls(params)
        state.step = int(d["step"])
        for store, loaded in (("m", d["m"]), ("v", d["v"])):
            own = getattr(state, store)
            for name in own:
                own[name][...] = loaded[name]
        return state


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
              eps: float = ADAM_EPS) -> None:
    """One bias-corrected Adam update in place; gradients are consumed as-is."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def nll_loss(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Masked mean negative log-likelihood over [B, T, vocab] logits.

    ``mask`` holds 1.0 for real target positions and 0.0 for padding; the
    mean is taken over real positions only.
    """
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=logits.dtype)
    if targets.shape != logits.shape[:-1] or mask.shape != targets.shape:
        raise ValueError(f"targets/mask {targets.shape}/{mask.shape} do not "
                         f"match logits {logits.shape}")
    total = mask.sum()
    if total == 0:
        raise ValueError("every target position is masked out")
    picked = take_along_last(log_softmax(logits, axis=-1), targets)
    return reduce_sum(picked * (-mask / logits.dtype.type(total)))


def _append_metric(path: Path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")
        fh.flush()


def _eval_loss(model, manifest: Manifest, split: str, config: TrainConfig,
               codec_config: CodecConfig) -> float | None:
    if not manifest.for_split(split):
        return None
    total = 0.0
    count = 0
    with no_grad():
        for batch in batch_iter(manifest, split, batch_size=config.batch_size,
                                seed=config.seed, epochs=1,
                                codec_config=codec_config):
            clips = normalize_batch(batch.clips)
            logits = model.forward(clips, batch.tokens[:, :-1])
            loss = nll_loss(logits, batch.tokens[:, 1:], batch.mask[:, 1:])
            total += loss.item()
            count += 1
    return total / count


def train_loop(model, manifest: Manifest, config: TrainConfig, out_dir,
               adam: AdamState | None = None, start_step: int = 1,
               codec_config: CodecConfig | None = None) -> list[dict]:
    """Run (or resume) training; returns the metric records it wrote.

    Resuming means passing the loaded model, its AdamState, and
    ``start_step`` = completed steps + 1: the batch stream and per-step
    dropout seeds are reconstructed, so the continued run is bit-identical
    to one that never stopped.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    codec_config = codec_config or CodecConfig()
    params = model.named_params()
    if adam is None:
        adam = AdamState(params)
    metrics_path = out_dir / METRICS_NAME
    ckpt_path = out_dir / CHECKPOINT_NAME

    batches = batch_iter(manifest, "train", batch_size=config.batch_size,
                         seed=config.seed, epochs=None,
                         codec_config=codec_config)
    for _ in range(start_step - 1):
        next(batches)

    written: list[dict] = []

    def checkpoint():
        save_checkpoint(model, ckpt_path, adam=adam.to_dict(),
                        codec_config=codec_config)

    for step in range(start_step, config.steps + 1):
        batch = next(batches)
        rng = new_rng((config.seed, step))
        clips = normalize_batch(batch.clips)
        logits = model.forward(clips, batch.tokens[:, :-1], train=True,
                               rng=rng)
        loss = nll_loss(logits, batch.tokens[:, 1:], batch.mask[:, 1:])
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise NumericError(f"non-finite loss at step {step}")
        for p in params.values():
            p.grad = None
        loss.backward()
        adam_step(params, adam, lr_schedule(step, config.peak_lr,
                                            config.warmup_steps))

        record = {"step": step,
                  "lr": lr_schedule(step, config.peak_lr, config.warmup_steps),
                  "train_loss": loss_value}
        if config.eval_every and step % config.eval_every == 0:
            val = _eval_loss(model, manifest, "validation", config,
                             codec_config)
            if val is not None:
                record["val_loss"] = val
        _append_metric(metrics_path, record)
        written.append(record)

        if config.checkpoint_every and step % config.checkpoint_every == 0:
            checkpoint()
        if (config.stop_below_loss is not None
                and loss_value < config.stop_below_loss):
            break

    checkpoint()
    return written


def steps_per_epoch(manifest: Manifest, batch_size: int) -> int:
    return batches_per_epoch(manifest, "train", batch_size)
