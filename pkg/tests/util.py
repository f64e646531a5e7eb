"""Shared generators for test corpora."""
import numpy as np

from vmt.midi import MidiScore, Note


def random_score(rng: np.random.Generator, max_notes: int = 24,
                 clip_len: float = 10.0, start_at_zero: bool = True) -> MidiScore:
    """A plausible constant-tempo piano fragment.

    Same-pitch notes keep at least 50 ms of separation so quantization to
    the 31.25 ms grid cannot make them collide; durations stay above 50 ms
    so no note quantizes away.
    """
    n_notes = int(rng.integers(1, max_notes + 1))
    by_pitch: dict[int, list[tuple[float, float]]] = {}
    notes = []
    for _ in range(n_notes * 4):
        if len(notes) >= n_notes:
            break
        onset = float(rng.uniform(0.0, clip_len - 0.25))
        dur = float(rng.uniform(0.05, min(2.5, clip_len - onset)))
        pitch = int(rng.integers(21, 109))
        taken = by_pitch.setdefault(pitch, [])
        if any(onset < b + 0.05 and onset + dur > a - 0.05 for a, b in taken):
            continue
        taken.append((onset, onset + dur))
        notes.append(Note(onset, onset + dur, pitch, int(rng.integers(1, 128))))
    notes.sort(key=lambda n: (n.onset_sec, n.pitch))
    if start_at_zero and notes:
        base = notes[0].onset_sec
        notes = [Note(n.onset_sec - base, n.offset_sec - base, n.pitch, n.velocity)
                 for n in notes]
    return MidiScore(notes=notes)
