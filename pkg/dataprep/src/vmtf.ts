/**
 * VMTF clip container: 12-byte header followed by raw RGB bytes.
 *
 * Layout: "VMTF", version byte, then little-endian u16 frames, u16 height,
 * u16 width, u8 channels. The payload is frame-major, row-major, RGB
 * interleaved. Consumers only accept 40x128x128x3, so the writer refuses
 * anything else up front.
 */

export const CLIP_FRAMES = 40;
export const CLIP_HEIGHT = 128;
export const CLIP_WIDTH = 128;
export const CLIP_CHANNELS = 3;
export const CLIP_SECONDS = 10;

const MAGIC = Buffer.from('VMTF');
const VERSION = 1;
const HEADER_BYTES = 12;
const PAYLOAD_BYTES = CLIP_FRAMES * CLIP_HEIGHT * CLIP_WIDTH * CLIP_CHANNELS;

/** One clip's pixels: CLIP_FRAMES frames of 128x128 RGB. */
export type ClipPixels = Uint8Array;

export function writeVmtf(pixels: ClipPixels): Buffer {
  if (pixels.length !== PAYLOAD_BYTES) {
    throw new Error(
      `clip payload is ${pixels.length} bytes, expected ${PAYLOAD_BYTES}`);
  }
  const header = Buffer.alloc(HEADER_BYTES);
  MAGIC.copy(header, 0);
  header.writeUInt8(VERSION, 4);
  header.writeUInt16LE(CLIP_FRAMES, 5);
  header.writeUInt16LE(CLIP_HEIGHT, 7);
  header.writeUInt16LE(CLIP_WIDTH, 9);
  header.writeUInt8(CLIP_CHANNELS, 11);
  return Buffer.concat([header, pixels]);
}

export function readVmtf(data: Buffer): ClipPixels {
  if (data.length < HEADER_BYTES || !data.subarray(0, 4).equals(MAGIC)) {
    throw new Error('not a VMTF container: bad magic');
  }
  if (data.readUInt8(4) !== VERSION) {
    throw new Error(`unsupported VMTF version ${data.readUInt8(4)}`);
  }
  const dims = [data.readUInt16LE(5), data.readUInt16LE(7),
    data.readUInt16LE(9), data.readUInt8(11)];
  const expect = [CLIP_FRAMES, CLIP_HEIGHT, CLIP_WIDTH, CLIP_CHANNELS];
  if (!dims.every((d, i) => d === expect[i])) {
    throw new Error(`unsupported clip dims ${dims.join('x')}, ` +
      `expected ${expect.join('x')}`);
  }
  const payload = data.subarray(HEADER_BYTES);
  if (payload.length !== PAYLOAD_BYTES) {
    throw new Error(
      `payload is ${payload.length} bytes, expected ${PAYLOAD_BYTES}`);
  }
  return new Uint8Array(payload);
}
