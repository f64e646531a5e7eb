"""A look inside the synthetic clip/MIDI corpus.

Writes a small dataset, prints what the manifest records, renders one
video frame as ASCII so the moving block is visible, and shows the
token sequence the paired MIDI encodes to. The same (seed, index)
always produces the same bytes, which is what makes training runs and
tests reproducible.
"""
import tempfile
from pathlib import Path

from vmt.codec import id_to_token
from vmt.data import batch_iter, load_pair, synth_dataset

out = Path(tempfile.mkdtemp(prefix="vmt_demo_")) / "ds"
manifest = synth_dataset(out, n_pairs=10, seed=42)

print(f"dataset at {out}")
for entry in manifest.entries[:4]:
    print(f"  {entry.clip}  {entry.midi}  split={entry.split}  song={entry.song_id}")
print("  ...")

pair = load_pair(manifest, manifest.entries[0])
frame = pair.clip.frames[0]  # 128 x 128 x 3 uint8

print(f"\nclip {manifest.entries[0].clip}: {pair.clip.frames.shape} uint8")
print("frame 0, downsampled to 32x32 (darker = brighter pixel):")
ramp = " .:-=+*#%@"
small = frame.mean(axis=2)[::4, ::4]  # 32 x 32 luma
for row in small:
    print("  " + "".join(ramp[int(v) * (len(ramp) - 1) // 255] for v in row))

kinds = [id_to_token(t).kind for t in pair.tokens]
print(f"\npaired tokens: {len(pair.tokens)} "
      f"({kinds.count('NOTE_ON')} NOTE_ON, {kinds.count('TIME_SHIFT')} TIME_SHIFT)")
print("first ten:", ", ".join(id_to_token(t).text() for t in pair.tokens[:10]))

batch = next(batch_iter(manifest, "train", batch_size=4, seed=0))
print(f"\none training batch: clips {batch.clips.shape}, tokens {batch.tokens.shape}, "
      f"mask sums {batch.mask.sum(axis=1).astype(int).tolist()}")
