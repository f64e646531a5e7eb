/**
 * Deterministic test media. The AVI writer emits exactly the flavor the
 * reader supports (one vids stream, uncompressed bottom-up RGB24), and the
 * synthetic piano take pairs with the video generator on a shared clock,
 * so fragment tests can predict what lands in every window.
 */

import { writeSmf, Score, Note, DEFAULT_TEMPO, DEFAULT_TPQ } from '../src/smf.js';

function u32(value: number): Buffer {
  const b = Buffer.alloc(4);
  b.writeUInt32LE(value >>> 0, 0);
  return b;
}

function chunk(fourcc: string, body: Buffer): Buffer {
  const padded = body.length & 1 ? Buffer.concat([body, Buffer.alloc(1)]) : body;
  return Buffer.concat([Buffer.from(fourcc, 'latin1'), u32(body.length), padded]);
}

function list(kind: string, ...bodies: Buffer[]): Buffer {
  return chunk('LIST', Buffer.concat([Buffer.from(kind, 'latin1'), ...bodies]));
}

/** Frames are tight top-down RGB; rows are flipped and padded on disk. */
export function writeAvi(frames: Uint8Array[], width: number, height: number,
                         fps: number): Buffer {
  const stride = (width * 3 + 3) & ~3;

  const avih = Buffer.alloc(56);
  avih.writeUInt32LE(Math.round(1e6 / fps), 0); // microseconds per frame
  avih.writeUInt32LE(frames.length, 16);
  avih.writeUInt32LE(1, 24); // one stream
  avih.writeUInt32LE(stride * height, 28);
  avih.writeUInt32LE(width, 32);
  avih.writeUInt32LE(height, 36);

  const strh = Buffer.alloc(56);
  strh.write('vids', 0, 'latin1');
  strh.write('DIB ', 4, 'latin1');
  strh.writeUInt32LE(1, 20); // scale
  strh.writeUInt32LE(fps, 24); // rate
  strh.writeUInt32LE(frames.length, 32);
  strh.writeUInt32LE(stride * height, 36);
  strh.writeUInt16LE(width, 52);
  strh.writeUInt16LE(height, 54);

  const strf = Buffer.alloc(40);
  strf.writeUInt32LE(40, 0);
  strf.writeInt32LE(width, 4);
  strf.writeInt32LE(height, 8); // positive: bottom-up rows
  strf.writeUInt16LE(1, 12);
  strf.writeUInt16LE(24, 14);
  strf.writeUInt32LE(0, 16); // BI_RGB
  strf.writeUInt32LE(stride * height, 20);

  const movi = frames.map((frame) => {
    const dib = Buffer.alloc(stride * height);
    for (let y = 0; y < height; y++) {
      const dstRow = (height - 1 - y) * stride;
      for (let x = 0; x < width; x++) {
        const src = (y * width + x) * 3;
        dib[dstRow + x * 3] = frame[src + 2]; // B
        dib[dstRow + x * 3 + 1] = frame[src + 1]; // G
        dib[dstRow + x * 3 + 2] = frame[src]; // R
      }
    }
    return chunk('00db', dib);
  });

  const hdrl = list('hdrl', chunk('avih', avih),
    list('strl', chunk('strh', strh), chunk('strf', strf)));
  const body = Buffer.concat([Buffer.from('AVI ', 'latin1'), hdrl,
    list('movi', ...movi)]);
  return Buffer.concat([Buffer.from('RIFF', 'latin1'), u32(body.length), body]);
}

export function solidFrame(width: number, height: number,
                           rgb: [number, number, number]): Uint8Array {
  const frame = new Uint8Array(width * height * 3);
  for (let i = 0; i < frame.length; i += 3) {
    frame[i] = rgb[0];
    frame[i + 1] = rgb[1];
    frame[i + 2] = rgb[2];
  }
  return frame;
}

/**
 * A white 24px block sweeping left to right once per 10 seconds over a
 * dark background, 128x128. Fully parametric, no randomness.
 */
export function blockFrame(tSec: number): Uint8Array {
  const size = 128;
  const block = 24;
  const frame = solidFrame(size, size, [12, 12, 12]);
  const left = Math.round(((tSec / 10) % 1) * (size - block));
  const top = 52;
  for (let y = top; y < top + block; y++) {
    for (let x = left; x < left + block; x++) {
      const at = (y * size + x) * 3;
      frame[at] = 255;
      frame[at + 1] = 255;
      frame[at + 2] = 255;
    }
  }
  return frame;
}

export function testVideo(seconds: number, fps = 4): Buffer {
  const frames = [];
  for (let i = 0; i < Math.round(seconds * fps); i++) {
    frames.push(blockFrame(i / fps));
  }
  return writeAvi(frames, 128, 128, fps);
}

/** Quarter-second eighth notes walking a five-note cell, one per beat. */
export function testMidi(seconds: number): Buffer {
  const cell = [60, 64, 67, 72, 67];
  const notes: Note[] = [];
  for (let k = 0; k * 0.5 < seconds - 0.5; k++) {
    notes.push({
      onsetSec: k * 0.5,
      offsetSec: k * 0.5 + 0.4,
      pitch: cell[k % cell.length],
      velocity: 70 + (k % 3) * 10,
    });
  }
  const score: Score = { notes, tempoMap: [[0, DEFAULT_TEMPO]],
    ticksPerQuarter: DEFAULT_TPQ, droppedNotes: 0 };
  return writeSmf(score);
}
