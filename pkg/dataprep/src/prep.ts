/**
 * Turn one aligned video + MIDI recording into paired training fragments.
 *
 * The video contributes 40 equidistant frames per 10-second window, the
 * MIDI the same window of notes, both on a shared grid that starts after
 * the configured trim windows are cut out. Alignment itself stays manual:
 * the caller supplies the tempo scale and the trims, the tool never
 * guesses them.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';

import { readAvi, Video } from './avi.js';
import { resizeRgb } from './resize.js';
import { clipScore, parseSmf, retimeSmf, scoreDuration, writeSmf,
  Score } from './smf.js';
import { writeVmtf, ClipPixels, CLIP_FRAMES, CLIP_HEIGHT, CLIP_WIDTH,
  CLIP_SECONDS } from './vmtf.js';

export class PrepError extends Error {}

export interface TrimWindow {
  /** Seconds into the aligned timeline. */
  start: number;
  end: number;
}

export interface PrepJob {
  video: string;
  midi: string;
  /** Multiplier aligning MIDI time to video time; 1 means already aligned. */
  tempoScale: number;
  /** Disjoint, ordered windows to cut out of both timelines. */
  trims: TrimWindow[];
  outDir: string;
  /** Split assignment hash seed. */
  seed?: number;
  /** Defaults to the video file's base name. */
  songId?: string;
}

export interface PrepResult {
  manifestPath: string;
  pairCount: number;
  split: string;
  skippedTailSec: number;
}

export const SPLITS = ['train', 'validation', 'test'] as const;
export type Split = typeof SPLITS[number];

/** Songs per split in the reference corpus; used as assignment weights. */
export const SPLIT_WEIGHTS: Record<Split, number> = {
  train: 90,
  validation: 10,
  test: 28,
};

export function validateJob(job: PrepJob): void {
  if (!(job.tempoScale > 0)) {
    throw new PrepError(`tempo scale must be positive, got ${job.tempoScale}`);
  }
  let prevEnd = -Infinity;
  for (const { start, end } of job.trims) {
    if (!(start >= 0 && end > start)) {
      throw new PrepError(`bad trim window [${start}, ${end})`);
    }
    if (start < prevEnd) {
      throw new PrepError('trim windows must be disjoint and ordered');
    }
    prevEnd = end;
  }
}

interface Segment {
  start: number;
  end: number;
}

/** The stretches of [0, duration) that survive the trims. */
export function keptSegments(duration: number, trims: TrimWindow[]): Segment[] {
  const kept: Segment[] = [];
  let cursor = 0;
  for (const { start, end } of trims) {
    if (start > cursor) kept.push({ start: cursor, end: Math.min(start, duration) });
    cursor = Math.max(cursor, end);
  }
  if (cursor < duration) kept.push({ start: cursor, end: duration });
  return kept.filter((s) => s.end > s.start);
}

/** Maps times on the concatenated kept timeline back to source times. */
class Timeline {
  readonly totalSec: number;
  private outStarts: number[];

  constructor(private segments: Segment[]) {
    this.outStarts = [];
    let acc = 0;
    for (const s of segments) {
      this.outStarts.push(acc);
      acc += s.end - s.start;
    }
    this.totalSec = acc;
  }

  toSource(tOut: number): number {
    let i = this.segments.length - 1;
    while (i > 0 && this.outStarts[i] > tOut) i--;
    return this.segments[i].start + (tOut - this.outStarts[i]);
  }
}

/**
 * Cut the trims out of a score: notes inside a trim vanish, later notes
 * shift left, and a note straddling a cut keeps its surviving parts.
 */
export function excise(score: Score, duration: number,
                       trims: TrimWindow[]): Score {
  const kept = keptSegments(duration, trims);
  const notes: Score['notes'] = [];
  let outStart = 0;
  for (const seg of kept) {
    const piece = clipScore(score, seg.start, seg.end);
    for (const n of piece.notes) {
      notes.push({ ...n, onsetSec: n.onsetSec + outStart,
        offsetSec: n.offsetSec + outStart });
    }
    outStart += seg.end - seg.start;
  }
  notes.sort((a, b) => a.onsetSec - b.onsetSec || a.pitch - b.pitch ||
    a.offsetSec - b.offsetSec);
  return { notes, tempoMap: score.tempoMap,
    ticksPerQuarter: score.ticksPerQuarter, droppedNotes: 0 };
}

export interface ExtractResult {
  clips: ClipPixels[];
  /** Footage left over after the last full window. */
  skippedTailSec: number;
}

/**
 * Sample 40 equidistant 128x128 RGB frames from each full 10-second
 * window of the (trimmed) video. A remainder shorter than a window is
 * skipped and reported, not padded.
 */
export function extractClips(video: Video, trims: TrimWindow[] = []): ExtractResult {
  const timeline = new Timeline(keptSegments(video.duration, trims));
  const windows = Math.floor(timeline.totalSec / CLIP_SECONDS + 1e-9);
  const frameSec = CLIP_SECONDS / CLIP_FRAMES;
  const clips: ClipPixels[] = [];
  for (let w = 0; w < windows; w++) {
    const clip = new Uint8Array(CLIP_FRAMES * CLIP_HEIGHT * CLIP_WIDTH * 3);
    for (let k = 0; k < CLIP_FRAMES; k++) {
      const tSrc = timeline.toSource(w * CLIP_SECONDS + k * frameSec);
      const index = Math.min(Math.round(tSrc * video.fps), video.frameCount - 1);
      const frame = resizeRgb(video.frame(index), video.width, video.height,
        CLIP_WIDTH, CLIP_HEIGHT);
      clip.set(frame, k * CLIP_HEIGHT * CLIP_WIDTH * 3);
    }
    clips.push(clip);
  }
  return { clips, skippedTailSec: timeline.totalSec - windows * CLIP_SECONDS };
}

function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

/** Deterministic song-level split: hash the id, cut by the split weights. */
export function splitForSong(songId: string, seed = 0): Split {
  const u = fnv1a(`${seed}:${songId}`) / 2 ** 32;
  const total = SPLITS.reduce((acc, s) => acc + SPLIT_WEIGHTS[s], 0);
  let cum = 0;
  for (const split of SPLITS) {
    cum += SPLIT_WEIGHTS[split] / total;
    if (u < cum) return split;
  }
  return 'test';
}

export function runPrep(job: PrepJob,
                        log: (line: string) => void = console.error): PrepResult {
  validateJob(job);
  const video = readAvi(fs.readFileSync(job.video));
  const midiBytes = fs.readFileSync(job.midi);
  const score = parseSmf(retimeSmf(midiBytes, job.tempoScale));

  const videoKept = new Timeline(keptSegments(video.duration, job.trims)).totalSec;
  const horizon = Math.max(scoreDuration(score), video.duration);
  const trimmed = excise(score, horizon, job.trims);
  const midiKept = scoreDuration(trimmed);
  if (Math.abs(videoKept - midiKept) > CLIP_SECONDS) {
    throw new PrepError(
      `video and MIDI disagree by more than one fragment after alignment: ` +
      `${videoKept.toFixed(2)}s of video vs ${midiKept.toFixed(2)}s of MIDI`);
  }

  const { clips, skippedTailSec } = extractClips(video, job.trims);
  if (skippedTailSec > 0) {
    log(`skipping ${skippedTailSec.toFixed(2)}s tail, shorter than a fragment`);
  }

  const songId = job.songId ?? path.parse(job.video).name;
  const split = splitForSong(songId, job.seed ?? 0);
  fs.mkdirSync(job.outDir, { recursive: true });

  const entries = [];
  for (let w = 0; w < clips.length; w++) {
    const stem = `${songId}_${String(w).padStart(4, '0')}`;
    const fragment = clipScore(trimmed, w * CLIP_SECONDS, (w + 1) * CLIP_SECONDS);
    fs.writeFileSync(path.join(job.outDir, `${stem}.vmtf`), writeVmtf(clips[w]));
    fs.writeFileSync(path.join(job.outDir, `${stem}.mid`), writeSmf(fragment));
    entries.push({ clip: `${stem}.vmtf`, midi: `${stem}.mid`, split,
      song_id: songId });
  }

  const manifestPath = path.join(job.outDir, 'manifest.json');
  fs.writeFileSync(manifestPath, JSON.stringify(entries, null, 2) + '\n');
  return { manifestPath, pairCount: entries.length, split,
    skippedTailSec };
}
