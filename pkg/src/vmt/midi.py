"""Standard MIDI file reading and writing for piano note lists.

The parse side accepts formats 0 and 1 (running status, multi-track,
tempo changes anywhere); everything lands in a ``MidiScore`` whose note
times are seconds, resolved through the merged tempo map. The write side
is deliberately narrow: format 0, 480 ticks per quarter, one tempo event,
which is all re-serialized fragments need.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

DEFAULT_TPQ = 480
DEFAULT_TEMPO = 500_000  # microseconds per quarter, 120 bpm
PITCH_MIN = 21
PITCH_MAX = 108


class MidiError(ValueError):
    """Malformed or unsupported standard MIDI data."""


@dataclass(frozen=True)
class Note:
    onset_sec: float
    offset_sec: float
    pitch: int
    velocity: int

    def __post_init__(self):
        if not self.offset_sec > self.onset_sec:
            raise ValueError(f"note must end after it starts: [{self.onset_sec}, {self.offset_sec})")
        if self.onset_sec < 0:
            raise ValueError(f"note onset before zero: {self.onset_sec}")
        if not PITCH_MIN <= self.pitch <= PITCH_MAX:
            raise ValueError(f"pitch {self.pitch} outside piano range [{PITCH_MIN}, {PITCH_MAX}]")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside [1, 127]")


@dataclass
class MidiScore:
    """Piano notes in seconds plus the tempo map they were resolved with.

    ``dropped_notes`` counts notes the parser had to discard (out-of-range
    pitch, never closed, zero length); it is diagnostic only and excluded
    from equality.
    """
    notes: list[Note] = field(default_factory=list)
    tempo_map: list[tuple[int, int]] = field(default_factory=lambda: [(0, DEFAULT_TEMPO)])
    ticks_per_quarter: int = DEFAULT_TPQ
    dropped_notes: int = field(default=0, compare=False)

    def duration(self) -> float:
        return max((n.offset_sec for n in self.notes), default=0.0)


class _TickClock:
    """Piecewise-linear tick to second conversion over a tempo map."""

    def __init__(self, tempo_map: list[tuple[int, int]], tpq: int):
        self.ticks = [t for t, _ in tempo_map]
        self.tempi = [us for _, us in tempo_map]
        self.tpq = tpq
        self.seconds = [0.0]
        for i in range(1, len(self.ticks)):
            dt = self.ticks[i] - self.ticks[i - 1]
            self.seconds.append(self.seconds[-1] + dt * self.tempi[i - 1] / (tpq * 1e6))

    def sec(self, tick: int) -> float:
        i = bisect.bisect_right(self.ticks, tick) - 1
        return self.seconds[i] + (tick - self.ticks[i]) * self.tempi[i] / (self.tpq * 1e6)

    def tempo_at_sec(self, sec: float) -> int:
        i = bisect.bisect_right(self.seconds, sec) - 1
        return self.tempi[max(i, 0)]


def _read_vlq(data: bytes, off: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if off >= len(data):
            raise MidiError(f"truncated variable-length quantity at byte {off}")
        b = data[off]
        off += 1
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, off
    raise MidiError(f"variable-length quantity over 4 bytes at byte {off}")


def _write_vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


# data byte counts per channel-message status nibble
_CHANNEL_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _parse_track(data: bytes, start: int, end: int):
    """One MTrk payload -> (note events, tempo events), ticks absolute."""
    notes = []   # (tick, on, channel, pitch, velocity)
    tempi = []   # (tick, us_per_quarter)
    off = start
    tick = 0
    running: int | None = None
    while off < end:
        delta, off = _read_vlq(data, off)
        tick += delta
        if off >= end:
            raise MidiError(f"truncated event at byte {off}")
        status = data[off]
        if status == 0xFF:
            running = None
            if off + 1 >= end:
                raise MidiError(f"truncated meta event at byte {off}")
            meta = data[off + 1]
            length, off = _read_vlq(data, off + 2)
            if off + length > end:
                raise MidiError(f"meta event runs past track end at byte {off}")
            if meta == 0x51:
                if length != 3:
                    raise MidiError(f"tempo event with length {length} at byte {off}")
                tempi.append((tick, int.from_bytes(data[off:off + 3], "big")))
            off += length
            if meta == 0x2F:
                break
            continue
        if status in (0xF0, 0xF7):
            running = None
            length, off = _read_vlq(data, off + 1)
            off += length
            if off > end:
                raise MidiError(f"sysex runs past track end at byte {off}")
            continue
        if status & 0x80:
            if status >= 0xF0:
                raise MidiError(f"unsupported status byte {status:#x} at byte {off}")
            running = status
            off += 1
        elif running is None:
            raise MidiError(f"data byte {status:#x} with no running status at byte {off}")
        else:
            status = running
        kind = status & 0xF0
        n = _CHANNEL_LEN[kind]
        if off + n > end:
            raise MidiError(f"truncated channel message at byte {off}")
        if kind in (0x80, 0x90):
            pitch, vel = data[off], data[off + 1]
            on = kind == 0x90 and vel > 0
            notes.append((tick, on, status & 0x0F, pitch, vel))
        off += n
    return notes, tempi


def parse_smf(data: bytes) -> MidiScore:
    """Parse a format 0 or 1 file into a second-domain note list.

    Notes pair up per channel and pitch within each track; a second
    note-on for a sounding pitch closes it at the new onset. Unclosed
    notes and pitches outside the piano range are dropped and counted.
    """
    if len(data) < 14 or data[0:4] != b"MThd":
        raise MidiError("not a standard MIDI file: missing MThd at byte 0")
    hlen = int.from_bytes(data[4:8], "big")
    if hlen < 6:
        raise MidiError(f"header length {hlen} below 6")
    fmt = int.from_bytes(data[8:10], "big")
    ntrks = int.from_bytes(data[10:12], "big")
    division = int.from_bytes(data[12:14], "big")
    if fmt not in (0, 1):
        raise MidiError(f"format {fmt} unsupported (only 0 and 1)")
    if division & 0x8000:
        raise MidiError("SMPTE time division unsupported")
    if division == 0:
        raise MidiError("ticks per quarter must be positive")

    off = 8 + hlen
    raw_notes = []
    tempi: list[tuple[int, int]] = []
    tracks_seen = 0
    while off < len(data) and tracks_seen < ntrks:
        if off + 8 > len(data):
            raise MidiError(f"truncated chunk header at byte {off}")
        fourcc = data[off:off + 4]
        length = int.from_bytes(data[off + 4:off + 8], "big")
        body_start = off + 8
        body_end = body_start + length
        if body_end > len(data):
            raise MidiError(f"chunk runs past end of file at byte {off}")
        if fourcc == b"MTrk":
            track_notes, track_tempi = _parse_track(data, body_start, body_end)
            raw_notes.append(track_notes)
            tempi.extend(track_tempi)
            tracks_seen += 1
        off = body_end
    if tracks_seen == 0:
        raise MidiError("no MTrk chunks found")

    # Merge tempo events; last event at a tick wins, tick 0 gets a default.
    tempo_map: dict[int, int] = {}
    for tick, us in sorted(tempi):
        tempo_map[tick] = us
    if 0 not in tempo_map:
        tempo_map[0] = DEFAULT_TEMPO
    tempo_list = sorted(tempo_map.items())
    clock = _TickClock(tempo_list, division)

    notes: list[Note] = []
    dropped = 0
    for track_notes in raw_notes:
        open_notes: dict[tuple[int, int], tuple[int, int]] = {}
        for tick, on, channel, pitch, vel in track_notes:
            key = (channel, pitch)
            if on:
                if key in open_notes:
                    onset, ovel = open_notes.pop(key)
                    dropped += _close(notes, onset, tick, pitch, ovel, clock)
                open_notes[key] = (tick, vel)
            elif key in open_notes:
                onset, ovel = open_notes.pop(key)
                dropped += _close(notes, onset, tick, pitch, ovel, clock)
        dropped += len(open_notes)
    notes.sort(key=lambda n: (n.onset_sec, n.pitch, n.offset_sec))
    return MidiScore(notes=notes, tempo_map=tempo_list,
                     ticks_per_quarter=division, dropped_notes=dropped)


def _close(notes: list[Note], onset_tick: int, offset_tick: int, pitch: int,
           velocity: int, clock: _TickClock) -> int:
    """Append a finished note; returns 1 if it had to be dropped instead."""
    if offset_tick <= onset_tick or not PITCH_MIN <= pitch <= PITCH_MAX:
        return 1
    notes.append(Note(clock.sec(onset_tick), clock.sec(offset_tick), pitch, velocity))
    return 0


def write_smf(score: MidiScore) -> bytes:
    """Serialize as format 0 at 480 ticks per quarter with a single tempo.

    The tempo active at tick 0 of the score's map becomes the one tempo
    event, so constant-tempo scores round-trip through parse_smf with at
    most half a tick of timing error.
    """
    tempo = score.tempo_map[0][1] if score.tempo_map else DEFAULT_TEMPO
    tpq = DEFAULT_TPQ
    events = []  # (tick, order, pitch, velocity, on)
    for note in score.notes:
        on_tick = _sec_to_tick(note.onset_sec, tempo, tpq)
        off_tick = _sec_to_tick(note.offset_sec, tempo, tpq)
        events.append((on_tick, 1, note.pitch, note.velocity, True))
        events.append((off_tick, 0, note.pitch, 64, False))
    events.sort(key=lambda e: (e[0], e[1], e[2]))

    body = bytearray()
    body += _write_vlq(0) + bytes([0xFF, 0x51, 0x03]) + tempo.to_bytes(3, "big")
    clock = 0
    for tick, _, pitch, velocity, on in events:
        body += _write_vlq(tick - clock)
        body += bytes([0x90 if on else 0x80, pitch, velocity])
        clock = tick
    body += _write_vlq(0) + bytes([0xFF, 0x2F, 0x00])

    header = b"MThd" + (6).to_bytes(4, "big") + (0).to_bytes(2, "big") \
        + (1).to_bytes(2, "big") + tpq.to_bytes(2, "big")
    return header + b"MTrk" + len(body).to_bytes(4, "big") + bytes(body)


def _sec_to_tick(sec: float, tempo_us: int, tpq: int) -> int:
    return int(sec * 1e6 / tempo_us * tpq + 0.5)


def clip_score(score: MidiScore, start_sec: float, end_sec: float) -> MidiScore:
    """Notes intersecting [start, end), re-based so the window starts at 0.

    Overhanging notes are trimmed to the window. The tempo map collapses
    to the tempo active at the window start; note times are already
    seconds, so this only matters on re-serialization.
    """
    if start_sec < 0 or end_sec <= start_sec:
        raise ValueError(f"bad clip window [{start_sec}, {end_sec})")
    kept = []
    for n in score.notes:
        if n.onset_sec < end_sec and n.offset_sec > start_sec:
            kept.append(Note(max(n.onset_sec, start_sec) - start_sec,
                             min(n.offset_sec, end_sec) - start_sec,
                             n.pitch, n.velocity))
    kept.sort(key=lambda n: (n.onset_sec, n.pitch, n.offset_sec))
    clock = _TickClock(score.tempo_map, score.ticks_per_quarter)
    tempo = clock.tempo_at_sec(start_sec)
    return MidiScore(notes=kept, tempo_map=[(0, tempo)],
                     ticks_per_quarter=score.ticks_per_quarter)
