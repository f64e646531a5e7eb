"""Performance-event token codec for piano scores.

The vocabulary has 310 entries: 88 NOTE_ON and 88 NOTE_OFF tokens for
pitches 21..108, 32 TIME_SHIFT tokens advancing the clock by 1..32 bins
of 31.25 ms, 100 VELOCITY tokens selecting the bin applied to subsequent
NOTE_ONs, and START/END delimiters. Encoding quantizes absolute event
times to the bin grid first and then emits gaps between quantized events,
so timing error stays within half a bin and never accumulates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .midi import MidiScore, Note, PITCH_MIN, PITCH_MAX

VOCAB_SIZE = 310
NOTE_ON_BASE = 0
NOTE_OFF_BASE = 88
TIME_SHIFT_BASE = 176
VELOCITY_BASE = 208
START_ID = 308
END_ID = 309
NUM_PITCHES = 88
MAX_SHIFT_BINS = 32
NUM_VELOCITY_BINS = 100
DEFAULT_DECODE_VELOCITY = 64  # applied when NOTE_ON precedes any VELOCITY


class CodecError(ValueError):
    """Input that the token codec cannot represent or interpret."""


@dataclass(frozen=True)
class CodecConfig:
    time_shift_ms: float = 31.25
    clip_len_sec: float = 10.0

    @property
    def bin_sec(self) -> float:
        return self.time_shift_ms / 1000.0


@dataclass(frozen=True)
class Token:
    kind: str  # NOTE_ON, NOTE_OFF, TIME_SHIFT, VELOCITY, START, END
    value: int | None = None

    def text(self) -> str:
        return self.kind if self.value is None else f"{self.kind} {self.value}"


def token_to_id(token: Token) -> int:
    kind, value = token.kind, token.value
    if kind == "NOTE_ON" and value is not None and PITCH_MIN <= value <= PITCH_MAX:
        return NOTE_ON_BASE + value - PITCH_MIN
    if kind == "NOTE_OFF" and value is not None and PITCH_MIN <= value <= PITCH_MAX:
        return NOTE_OFF_BASE + value - PITCH_MIN
    if kind == "TIME_SHIFT" and value is not None and 1 <= value <= MAX_SHIFT_BINS:
        return TIME_SHIFT_BASE + value - 1
    if kind == "VELOCITY" and value is not None and 1 <= value <= NUM_VELOCITY_BINS:
        return VELOCITY_BASE + value - 1
    if kind == "START" and value is None:
        return START_ID
    if kind == "END" and value is None:
        return END_ID
    raise CodecError(f"no id for token {token!r}")


def id_to_token(token_id: int) -> Token:
    if not 0 <= token_id < VOCAB_SIZE:
        raise CodecError(f"token id {token_id} outside [0, {VOCAB_SIZE})")
    if token_id < NOTE_OFF_BASE:
        return Token("NOTE_ON", token_id + PITCH_MIN)
    if token_id < TIME_SHIFT_BASE:
        return Token("NOTE_OFF", token_id - NOTE_OFF_BASE + PITCH_MIN)
    if token_id < VELOCITY_BASE:
        return Token("TIME_SHIFT", token_id - TIME_SHIFT_BASE + 1)
    if token_id < START_ID:
        return Token("VELOCITY", token_id - VELOCITY_BASE + 1)
    return Token("START") if token_id == START_ID else Token("END")


def parse_token_text(text: str) -> Token:
    parts = text.split()
    if len(parts) == 1:
        token = Token(parts[0])
    elif len(parts) == 2 and (parts[1].isdigit() or parts[1].lstrip("-").isdigit()):
        token = Token(parts[0], int(parts[1]))
    else:
        raise CodecError(f"cannot parse token text {text!r}")
    token_to_id(token)  # validates kind and range
    return token


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def velocity_to_bin(velocity: int) -> int:
    return math.ceil(velocity * NUM_VELOCITY_BINS / 127)


def bin_to_velocity(vbin: int) -> int:
    return _round_half_up(vbin * 127 / NUM_VELOCITY_BINS)


def encode(score: MidiScore, config: CodecConfig = CodecConfig()) -> list[int]:
    """Token ids for a score, wrapped in START and END.

    Offsets sort before onsets within a bin, and a VELOCITY token appears
    only when the bin differs from the previous one. Notes shorter than a
    bin are widened to one bin rather than silently dropped.
    """
    for n in score.notes:
        if n.offset_sec > config.clip_len_sec + 1e-9:
            raise CodecError(
                f"note ends at {n.offset_sec:.3f}s, past the {config.clip_len_sec}s clip")

    events = []  # (bin, is_on, pitch, velocity_bin)
    for n in score.notes:
        on_bin = _round_half_up(n.onset_sec / config.bin_sec)
        off_bin = max(_round_half_up(n.offset_sec / config.bin_sec), on_bin + 1)
        events.append((on_bin, 1, n.pitch, velocity_to_bin(n.velocity)))
        events.append((off_bin, 0, n.pitch, 0))
    events.sort()

    ids = [START_ID]
    clock = 0
    vel_state: int | None = None
    for ev_bin, is_on, pitch, vbin in events:
        gap = ev_bin - clock
        while gap > MAX_SHIFT_BINS:
            ids.append(TIME_SHIFT_BASE + MAX_SHIFT_BINS - 1)
            gap -= MAX_SHIFT_BINS
        if gap > 0:
            ids.append(TIME_SHIFT_BASE + gap - 1)
        clock = ev_bin
        if is_on:
            if vbin != vel_state:
                ids.append(VELOCITY_BASE + vbin - 1)
                vel_state = vbin
            ids.append(NOTE_ON_BASE + pitch - PITCH_MIN)
        else:
            ids.append(NOTE_OFF_BASE + pitch - PITCH_MIN)
    ids.append(END_ID)
    return ids


def decode(ids: list[int], config: CodecConfig = CodecConfig()) -> tuple[MidiScore, list[str]]:
    """Reconstruct a score from token ids; total over malformed streams.

    Returns the score plus one warning string per recovered defect:
    NOTE_OFF with nothing open, NOTE_ON left open at the end (the note is
    dropped), or a note that decodes to zero length. Times truncate at
    the clip boundary. Everything after the first END is ignored.
    """
    clock = 0  # bins
    velocity = DEFAULT_DECODE_VELOCITY
    open_notes: dict[int, tuple[int, int]] = {}  # pitch -> (onset_bin, velocity)
    finished: list[tuple[int, int, int, int]] = []  # onset_bin, offset_bin, pitch, velocity
    warnings: list[str] = []

    for token_id in ids:
        token = id_to_token(token_id)  # raises on out-of-range ids
        if token.kind == "END":
            break
        if token.kind == "START":
            continue
        if token.kind == "TIME_SHIFT":
            clock += token.value
        elif token.kind == "VELOCITY":
            velocity = bin_to_velocity(token.value)
        elif token.kind == "NOTE_ON":
            if token.value in open_notes:
                _finish(open_notes, finished, warnings, token.value, clock)
            open_notes[token.value] = (clock, velocity)
        elif token.kind == "NOTE_OFF":
            if token.value in open_notes:
                _finish(open_notes, finished, warnings, token.value, clock)
            else:
                warnings.append(f"NOTE_OFF without matching NOTE_ON: pitch {token.value}")

    for pitch in sorted(open_notes):
        warnings.append(f"NOTE_ON without NOTE_OFF: pitch {pitch} dropped")

    notes = []
    for onset_bin, offset_bin, pitch, vel in finished:
        onset = onset_bin * config.bin_sec
        offset = min(offset_bin * config.bin_sec, config.clip_len_sec)
        if onset >= config.clip_len_sec:
            warnings.append(f"note at pitch {pitch} starts past the clip end, dropped")
        elif offset > onset:
            notes.append(Note(onset, offset, pitch, vel))
    notes.sort(key=lambda n: (n.onset_sec, n.pitch, n.offset_sec))
    return MidiScore(notes=notes), warnings


def _finish(open_notes: dict, finished: list, warnings: list, pitch: int, clock: int) -> None:
    onset_bin, velocity = open_notes.pop(pitch)
    if clock <= onset_bin:
        warnings.append(f"zero-length note at pitch {pitch} dropped")
    else:
        finished.append((onset_bin, clock, pitch, velocity))
