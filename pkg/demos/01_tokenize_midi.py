"""Tokenizing a small piano fragment and reading it back.

Builds a four-note score by hand, walks through the performance-event
stream it encodes to, then decodes the stream and reports how far the
reconstruction drifted from the original (it stays within half a time
bin and one velocity bin).
"""
from vmt.codec import CodecConfig, decode, encode, id_to_token
from vmt.midi import MidiScore, Note

score = MidiScore(notes=[
    Note(onset_sec=0.00, offset_sec=0.90, pitch=60, velocity=96),   # C4
    Note(onset_sec=0.50, offset_sec=1.40, pitch=64, velocity=80),   # E4
    Note(onset_sec=1.00, offset_sec=2.20, pitch=67, velocity=80),   # G4
    Note(onset_sec=1.00, offset_sec=2.20, pitch=48, velocity=120),  # C3
])

config = CodecConfig()
ids = encode(score, config)

print(f"{len(score.notes)} notes -> {len(ids)} tokens "
      f"(time grid {config.time_shift_ms} ms)\n")
for i in ids:
    token = id_to_token(i)
    print(f"  {i:3d}  {token.text()}")

decoded, warnings = decode(ids, config)
print(f"\ndecoded back to {len(decoded.notes)} notes, "
      f"{len(warnings)} warnings")
# the stream orders same-instant notes by pitch, so sort both sides the
# same way before diffing (the chord would otherwise cross-pair)
by_time = lambda n: (n.onset_sec, n.pitch)
for a, b in zip(sorted(score.notes, key=by_time),
                sorted(decoded.notes, key=by_time)):
    print(f"  pitch {a.pitch:3d}: onset drift {abs(a.onset_sec - b.onset_sec)*1000:5.2f} ms, "
          f"offset drift {abs(a.offset_sec - b.offset_sec)*1000:5.2f} ms, "
          f"velocity {a.velocity} -> {b.velocity}")
