"""Generation: greedy or temperature sampling over cached decoder state.

A generated sequence always starts with START and ends with END. The model
is asked for at most ``max_events`` tokens (further capped by what the
decoder cache can hold); if it never emits END on its own, END is forced at
the cap, and the result records which of the two happened.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import CodecConfig, END_ID, START_ID, VOCAB_SIZE, decode
from .data import FrameClip, normalize_batch
from .midi import MidiScore
from .tensor import new_rng, no_grad

GEN_MODES = ("greedy", "sample")
MAX_EVENTS = 1024


@dataclass(frozen=True)
class GenConfig:
    mode: str = "greedy"
    temperature: float = 1.0
    seed: int = 0
    max_events: int = MAX_EVENTS

    def __post_init__(self):
        if self.mode not in GEN_MODES:
            raise ValueError(f"unknown generation mode {self.mode!r}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, "
                             f"got {self.temperature}")
        if self.max_events < 1:
            raise ValueError("max_events must be positive")


@dataclass
class GenResult:
    ids: list[int]
    ended_naturally: bool  # False when END was forced at the cap


def _pick(logits: np.ndarray, config: GenConfig,
          rng: np.random.Generator) -> int:
    if config.mode == "greedy":
        return int(np.argmax(logits))
    scaled = logits.astype(np.float64) / config.temperature
    scaled -= scaled.max()
    probs = np.exp(scaled)
    probs /= probs.sum()
    return int(rng.choice(VOCAB_SIZE, p=probs))


def generate_detail(model, clip: FrameClip,
                    config: GenConfig = GenConfig()) -> GenResult:
    """Run one clip through the model and decode token ids autoregressively."""
    rng = new_rng(config.seed)
    cap = min(config.max_events, model.config.max_target_len)
    with no_grad():
        clips = normalize_batch(clip.frames[None])
        if clips.dtype != model.dtype:
            raise TypeError(f"model is {model.dtype}, clips normalize to "
                            f"{clips.dtype}")
        state = model.begin_decode(model.encode(model.encode_frames(clips)))

    ids = [START_ID]
    token = START_ID
    for _ in range(cap - 1):
        token = _pick(model.decode_step(state, token), config, rng)
        ids.append(token)
        if token == END_ID:
            return GenResult(ids=ids, ended_naturally=True)
    # out of budget: one last model query, then END regardless
    token = _pick(model.decode_step(state, token), config, rng)
    ids.append(END_ID)
    return GenResult(ids=ids, ended_naturally=token == END_ID)


def generate(model, clip: FrameClip,
             config: GenConfig = GenConfig()) -> list[int]:
    return generate_detail(model, clip, config).ids


def generate_midi(model, clip: FrameClip, config: GenConfig = GenConfig(),
                  codec_config: CodecConfig = CodecConfig()
                  ) -> tuple[MidiScore, list[str], float]:
    """Generate and decode to a score; returns (score, warnings, duration)."""
    ids = generate(model, clip, config)
    score, warnings = decode(ids, codec_config)
    return score, warnings, score.duration()
