"""Frame-clip container, manifests, batching, and synthetic paired data.

Clips travel as VMTF files: a tiny uncompressed container holding exactly
40 RGB frames of 128x128. Manifests are JSON lists tying clip files to
MIDI files with a train/validation/test split keyed by song. The
synthetic generator renders a moving bright block whose vertical band and
motion period fully determine a note pattern, giving a learnable
video-to-music correlation at desk scale.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .codec import CodecConfig, END_ID, START_ID, encode
from .midi import MidiScore, Note, parse_smf, write_smf
from .tensor import Tensor, new_rng

VMTF_MAGIC = b"VMTF"
VMTF_VERSION = 1
CLIP_FRAMES = 40
CLIP_HEIGHT = 128
CLIP_WIDTH = 128
CLIP_CHANNELS = 3
CLIP_SECONDS = 10.0
MAX_TOKENS = 1024
SPLITS = ("train", "validation", "test")


class DataError(ValueError):
    """Bad container bytes, manifest contents, or dataset invariants."""


@dataclass(eq=False)
class FrameClip:
    frames: np.ndarray  # 40 x 128 x 128 x 3 uint8, RGB

    def __post_init__(self):
        expect = (CLIP_FRAMES, CLIP_HEIGHT, CLIP_WIDTH, CLIP_CHANNELS)
        if not isinstance(self.frames, np.ndarray) or self.frames.shape != expect:
            raise DataError(f"clip must be shaped {expect}, got "
                            f"{getattr(self.frames, 'shape', type(self.frames))}")
        if self.frames.dtype != np.uint8:
            raise DataError(f"clip frames must be uint8, got {self.frames.dtype}")

    def __eq__(self, other):
        return isinstance(other, FrameClip) and np.array_equal(self.frames, other.frames)


def write_vmtf(clip: FrameClip) -> bytes:
    header = VMTF_MAGIC + bytes([VMTF_VERSION]) + struct.pack(
        "<HHHB", CLIP_FRAMES, CLIP_HEIGHT, CLIP_WIDTH, CLIP_CHANNELS)
    return header + clip.frames.tobytes()


def read_vmtf(data: bytes) -> FrameClip:
    if len(data) < 12 or data[:4] != VMTF_MAGIC:
        raise DataError("not a VMTF container: bad magic")
    if data[4] != VMTF_VERSION:
        raise DataError(f"unsupported VMTF version {data[4]}")
    frames, height, width, channels = struct.unpack("<HHHB", data[5:12])
    expect_dims = (CLIP_FRAMES, CLIP_HEIGHT, CLIP_WIDTH, CLIP_CHANNELS)
    if (frames, height, width, channels) != expect_dims:
        raise DataError(f"unsupported clip dims {(frames, height, width, channels)}, "
                        f"expected {expect_dims}")
    payload = data[12:]
    expect_bytes = frames * height * width * channels
    if len(payload) != expect_bytes:
        raise DataError(f"payload is {len(payload)} bytes, expected {expect_bytes}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(expect_dims)
    return FrameClip(frames=arr.copy())


def normalize(clip: FrameClip) -> Tensor:
    """Channel-first float32 in [-1, 1]: v/127.5 - 1."""
    x = clip.frames.astype(np.float32) / np.float32(127.5) - np.float32(1.0)
    return Tensor(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))


def normalize_batch(clips: np.ndarray) -> Tensor:
    """Same mapping over stacked clips: [B, T, h, w, 3] -> [B, T, 3, h, w]."""
    x = clips.astype(np.float32) / np.float32(127.5) - np.float32(1.0)
    return Tensor(np.ascontiguousarray(x.transpose(0, 1, 4, 2, 3)))


@dataclass(frozen=True)
class ManifestEntry:
    clip: str
    midi: str
    split: str
    song_id: str


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = Path(".")  # paths in entries resolve against this

    def resolve(self, relative: str) -> Path:
        return self.root / relative

    def for_split(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    doc = [{"clip": e.clip, "midi": e.midi, "split": e.split, "song_id": e.song_id}
           for e in manifest.entries]
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> Manifest:
    """Parse and validate a manifest; paths must exist and splits must be
    disjoint at song level."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    if not isinstance(doc, list):
        raise DataError(f"manifest {path} must be a JSON list")
    root = path.parent
    entries = []
    song_split: dict[str, str] = {}
    for i, item in enumerate(doc):
        try:
            entry = ManifestEntry(item["clip"], item["midi"], item["split"], item["song_id"])
        except (KeyError, TypeError):
            raise DataError(f"manifest entry {i} is missing clip/midi/split/song_id") from None
        if entry.split not in SPLITS:
            raise DataError(f"manifest entry {i} has unknown split {entry.split!r}")
        for rel in (entry.clip, entry.midi):
            if not (root / rel).is_file():
                raise DataError(f"manifest references missing file {rel}")
        prev = song_split.setdefault(entry.song_id, entry.split)
        if prev != entry.split:
            raise DataError(f"song {entry.song_id} appears in splits {prev} and {entry.split}")
        entries.append(entry)
    return Manifest(entries=entries, root=root)


@dataclass
class ClipPair:
    clip: FrameClip
    tokens: list[int]  # START ... END
    source_id: str

    def __post_init__(self):
        if len(self.tokens) > MAX_TOKENS:
            raise DataError(f"{self.source_id}: {len(self.tokens)} tokens exceeds {MAX_TOKENS}")
        if not self.tokens or self.tokens[0] != START_ID or self.tokens[-1] != END_ID:
            raise DataError(f"{self.source_id}: token sequence must run START..END")


def load_pair(manifest: Manifest, entry: ManifestEntry,
              codec_config: CodecConfig = CodecConfig()) -> ClipPair:
    clip = read_vmtf(manifest.resolve(entry.clip).read_bytes())
    score = parse_smf(manifest.resolve(entry.midi).read_bytes())
    tokens = encode(score, codec_config)
    return ClipPair(clip=clip, tokens=tokens, source_id=entry.clip)


@dataclass
class Batch:
    clips: np.ndarray        # B x 40 x 128 x 128 x 3 uint8
    tokens: np.ndarray       # B x L int64, END-padded to the batch max
    mask: np.ndarray         # B x L float32, 1 on real tokens
    source_ids: list[str]


def collate(pairs: list[ClipPair]) -> Batch:
    width = max(len(p.tokens) for p in pairs)
    tokens = np.full((len(pairs), width), END_ID, dtype=np.int64)
    mask = np.zeros((len(pairs), width), dtype=np.float32)
    clips = np.stack([p.clip.frames for p in pairs])
    for i, p in enumerate(pairs):
        tokens[i, :len(p.tokens)] = p.tokens
        mask[i, :len(p.tokens)] = 1.0
    return Batch(clips=clips, tokens=tokens, mask=mask,
                 source_ids=[p.source_id for p in pairs])


def batch_iter(manifest: Manifest, split: str, batch_size: int = 4, seed: int = 0,
               epochs: int | None = None,
               codec_config: CodecConfig = CodecConfig()) -> Iterator[Batch]:
    """Deterministic batches: a fresh shuffle per epoch derived from
    (seed, epoch), a short final batch, pairs cached across epochs."""
    entries = manifest.for_split(split)
    if not entries:
        raise DataError(f"split {split!r} is empty")
    cache: dict[int, ClipPair] = {}
    epoch = 0
    while epochs is None or epoch < epochs:
        order = new_rng((seed, epoch)).permutation(len(entries))
        for lo in range(0, len(order), batch_size):
            chosen = order[lo:lo + batch_size]
            pairs = []
            for idx in chosen:
                if idx not in cache:
                    cache[idx] = load_pair(manifest, entries[idx], codec_config)
                pairs.append(cache[idx])
            yield collate(pairs)
        epoch += 1


def batches_per_epoch(manifest: Manifest, split: str, batch_size: int = 4) -> int:
    n = len(manifest.for_split(split))
    return math.ceil(n / batch_size)


# Synthetic data: the block's vertical band picks the root pitch
# (top band 84 down to bottom band 36) and the motion period picks how
# often notes fire. Horizontal phase varies per pair but carries no
# musical meaning, so identical patterns never get conflicting targets.

_BANDS = 5
_ROOT_PITCHES = tuple(84 - 12 * band for band in range(_BANDS))
_PERIODS = (1.0, 1.25, 2.0)
_ARPEGGIO = (0, 4, 7)
_BLOCK = 24  # block side length in pixels
_PALETTE = ((235, 64, 52), (235, 189, 52), (88, 235, 52), (52, 198, 235), (171, 52, 235))


def _synth_score(band: int, period_idx: int) -> MidiScore:
    period = _PERIODS[period_idx]
    root = _ROOT_PITCHES[band]
    velocity = 40 + band * 10 + period_idx * 5
    notes = []
    k = 0
    while (onset := k * period) < CLIP_SECONDS - 1e-9:
        dur = min(period * 0.6, CLIP_SECONDS - onset)
        notes.append(Note(onset, onset + dur, root + _ARPEGGIO[k % 3], velocity))
        k += 1
    return MidiScore(notes=notes)


def _synth_clip(band: int, period_idx: int, phase: float) -> FrameClip:
    period = _PERIODS[period_idx]
    color = np.array(_PALETTE[band], dtype=np.uint8)
    frames = np.full((CLIP_FRAMES, CLIP_HEIGHT, CLIP_WIDTH, CLIP_CHANNELS), 12, dtype=np.uint8)
    band_h = CLIP_HEIGHT // _BANDS
    top = band * band_h + (band_h - _BLOCK) // 2
    travel = CLIP_WIDTH - _BLOCK
    for f in range(CLIP_FRAMES):
        t = f * (CLIP_SECONDS / CLIP_FRAMES)
        pos = 0.5 + 0.5 * math.sin(2 * math.pi * t / period + phase)
        left = int(pos * travel)
        frames[f, top:top + _BLOCK, left:left + _BLOCK] = color
    return FrameClip(frames=frames)


def synth_index_traits(index: int) -> tuple[int, int]:
    """(band, period index) for pair number ``index``."""
    return index % _BANDS, (index // _BANDS) % len(_PERIODS)


def _default_split(index: int) -> str:
    rem = index % 10
    return "train" if rem < 8 else ("validation" if rem == 8 else "test")


def synth_dataset(out_dir: str | Path, n_pairs: int, seed: int = 0,
                  counts: tuple[int, int, int] | None = None) -> Manifest:
    """Write n_pairs clip/MIDI files plus manifest.json; same seed, same bytes.

    By default pair i lands in train/validation/test by i mod 10 (8/1/1).
    ``counts`` overrides that with exact split sizes in manifest order,
    which must sum to n_pairs.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    if counts is not None and sum(counts) != n_pairs:
        raise ValueError(f"split counts {counts} do not sum to {n_pairs}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_pairs):
        band, period_idx = synth_index_traits(i)
        phase = float(new_rng((seed, i)).uniform(0.0, 2.0 * math.pi))
        clip_name, midi_name = f"pair_{i:04d}.vmtf", f"pair_{i:04d}.mid"
        (out / clip_name).write_bytes(write_vmtf(_synth_clip(band, period_idx, phase)))
        (out / midi_name).write_bytes(write_smf(_synth_score(band, period_idx)))
        if counts is None:
            split = _default_split(i)
        else:
            split = "train" if i < counts[0] else (
                "validation" if i < counts[0] + counts[1] else "test")
        entries.append(ManifestEntry(clip_name, midi_name, split, f"synth-{i:04d}"))
    manifest = Manifest(entries=entries, root=out)
    save_manifest(manifest, out / "manifest.json")
    return manifest
