/**
 * Reader for uncompressed RGB24 AVI files.
 *
 * This sandbox-friendly subset covers what lossless screen/piano captures
 * use: one 'vids' stream, BI_RGB bottom-up DIB frames in '00db' chunks.
 * Anything compressed is rejected as undecodable rather than half-read.
 */

function fourcc(data: Buffer, off: number): string {
  return data.toString('latin1', off, off + 4);
}

export class VideoError extends Error {}

export interface Video {
  width: number;
  height: number;
  fps: number;
  frameCount: number;
  /** Seconds of footage. */
  duration: number;
  /** Frame i as tight top-down RGB bytes (height * width * 3). */
  frame(i: number): Uint8Array;
}

interface StreamInfo {
  width: number;
  height: number;
  fps: number;
  bottomUp: boolean;
}

export function readAvi(data: Buffer): Video {
  if (data.length < 12 || fourcc(data, 0) !== 'RIFF' ||
      fourcc(data, 8) !== 'AVI ') {
    throw new VideoError('undecodable video: not a RIFF AVI file');
  }

  let info: StreamInfo | null = null;
  const frameOffsets: Array<{ off: number; size: number }> = [];

  const walk = (start: number, end: number) => {
    let off = start;
    while (off + 8 <= end) {
      const id = fourcc(data, off);
      const size = data.readUInt32LE(off + 4);
      const body = off + 8;
      if (body + size > end) {
        throw new VideoError(`undecodable video: chunk ${id} overruns file`);
      }
      if (id === 'LIST') {
        walk(body + 4, body + size);
      } else if (id === 'strh' && fourcc(data, body) === 'vids') {
        info = readStreamPair(data, off, end);
      } else if (id.endsWith('dc')) {
        throw new VideoError(
          'undecodable video: compressed frames (no system codecs here)');
      } else if (id.endsWith('db')) {
        frameOffsets.push({ off: body, size });
      }
      off = body + size + (size & 1); // chunks are word-aligned
    }
  };
  walk(12, data.length);

  if (info === null) {
    throw new VideoError('undecodable video: no vids stream header');
  }
  if (frameOffsets.length === 0) {
    throw new VideoError('undecodable video: no frame chunks');
  }
  const { width, height, fps, bottomUp } = info as StreamInfo;
  const stride = (width * 3 + 3) & ~3; // DIB rows pad to 4 bytes

  return {
    width,
    height,
    fps,
    frameCount: frameOffsets.length,
    duration: frameOffsets.length / fps,
    frame(i: number): Uint8Array {
      if (i < 0 || i >= frameOffsets.length) {
        throw new RangeError(`frame ${i} of ${frameOffsets.length}`);
      }
      const { off, size } = frameOffsets[i];
      if (size < stride * height) {
        throw new VideoError(`undecodable video: frame ${i} is ${size} ` +
          `bytes, needs ${stride * height}`);
      }
      const out = new Uint8Array(width * height * 3);
      for (let y = 0; y < height; y++) {
        const srcRow = off + (bottomUp ? height - 1 - y : y) * stride;
        let dst = y * width * 3;
        for (let x = 0; x < width; x++) {
          const src = srcRow + x * 3; // BGR on disk
          out[dst++] = data[src + 2];
          out[dst++] = data[src + 1];
          out[dst++] = data[src];
        }
      }
      return out;
    },
  };
}

function readStreamPair(data: Buffer, strhOff: number, end: number): StreamInfo {
  const body = strhOff + 8;
  const scale = data.readUInt32LE(body + 20);
  const rate = data.readUInt32LE(body + 24);
  if (scale === 0 || rate === 0) {
    throw new VideoError('undecodable video: stream header has no frame rate');
  }

  // strf with the bitmap header follows its strh inside the same list
  const strhSize = data.readUInt32LE(strhOff + 4);
  const strfOff = strhOff + 8 + strhSize + (strhSize & 1);
  if (strfOff + 8 > end || fourcc(data, strfOff) !== 'strf') {
    throw new VideoError('undecodable video: missing stream format chunk');
  }
  const bmp = strfOff + 8;
  const biHeight = data.readInt32LE(bmp + 8);
  const bitCount = data.readUInt16LE(bmp + 14);
  const compression = data.readUInt32LE(bmp + 16);
  if (compression !== 0 || bitCount !== 24) {
    throw new VideoError(`undecodable video: need uncompressed 24-bit ` +
      `frames, got compression ${compression} at ${bitCount} bpp`);
  }
  return {
    width: data.readInt32LE(bmp + 4),
    height: Math.abs(biHeight),
    fps: rate / scale,
    bottomUp: biHeight > 0,
  };
}
