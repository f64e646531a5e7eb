/**
 * Standard MIDI file support: parse to seconds, window into fragments,
 * retime, and write fragments back out.
 *
 * The parser accepts formats 0 and 1 with running status and tempo changes
 * anywhere. The writer is narrow on purpose (format 0, 480 ticks per
 * quarter, one tempo event) so emitted fragments match what the training
 * side reads. Retiming edits tempo events in place and leaves every other
 * byte alone, so a scale of 1 is the identity on the file.
 */

export class MidiError extends Error {}

export const PITCH_MIN = 21;
export const PITCH_MAX = 108;
export const DEFAULT_TPQ = 480;
export const DEFAULT_TEMPO = 500_000; // microseconds per quarter

export interface Note {
  onsetSec: number;
  offsetSec: number;
  pitch: number;
  velocity: number;
}

export interface Score {
  notes: Note[];
  /** [tick, microseconds per quarter] ascending, first entry at tick 0. */
  tempoMap: Array<[number, number]>;
  ticksPerQuarter: number;
  /** Notes the parser had to discard; diagnostic only. */
  droppedNotes: number;
}

function readVlq(data: Buffer, off: number): [number, number] {
  let value = 0;
  for (let i = 0; i < 4; i++) {
    if (off >= data.length) {
      throw new MidiError(`truncated variable-length quantity at byte ${off}`);
    }
    const b = data[off++];
    value = (value << 7) | (b & 0x7f);
    if ((b & 0x80) === 0) return [value, off];
  }
  throw new MidiError(`variable-length quantity over 4 bytes at byte ${off}`);
}

function writeVlq(value: number): number[] {
  const out = [value & 0x7f];
  value >>= 7;
  while (value > 0) {
    out.push(0x80 | (value & 0x7f));
    value >>= 7;
  }
  return out.reverse();
}

// data byte counts per channel-message status nibble
const CHANNEL_LEN: Record<number, number> = {
  0x80: 2, 0x90: 2, 0xa0: 2, 0xb0: 2, 0xc0: 1, 0xd0: 1, 0xe0: 2,
};

interface TrackEvent {
  tick: number;
  /** Resolved status byte; 0xff for meta, 0xf0/0xf7 for sysex. */
  status: number;
  metaType: number;
  /** Offsets of the event's data bytes (meta/sysex payload or channel data). */
  dataOff: number;
  dataLen: number;
}

/** Walk one MTrk payload, resolving running status and absolute ticks. */
function* trackEvents(data: Buffer, start: number, end: number):
    Generator<TrackEvent> {
  let off = start;
  let tick = 0;
  let running: number | null = null;
  while (off < end) {
    let delta: number;
    [delta, off] = readVlq(data, off);
    tick += delta;
    if (off >= end) throw new MidiError(`truncated event at byte ${off}`);
    let status = data[off];
    if (status === 0xff) {
      running = null;
      if (off + 1 >= end) {
        throw new MidiError(`truncated meta event at byte ${off}`);
      }
      const metaType = data[off + 1];
      let length: number;
      [length, off] = readVlq(data, off + 2);
      if (off + length > end) {
        throw new MidiError(`meta event runs past track end at byte ${off}`);
      }
      yield { tick, status, metaType, dataOff: off, dataLen: length };
      off += length;
      if (metaType === 0x2f) return;
      continue;
    }
    if (status === 0xf0 || status === 0xf7) {
      running = null;
      let length: number;
      [length, off] = readVlq(data, off + 1);
      if (off + length > end) {
        throw new MidiError(`sysex runs past track end at byte ${off}`);
      }
      yield { tick, status, metaType: -1, dataOff: off, dataLen: length };
      off += length;
      continue;
    }
    if (status & 0x80) {
      if (status >= 0xf0) {
        throw new MidiError(`unsupported status byte 0x${status.toString(16)} at byte ${off}`);
      }
      running = status;
      off += 1;
    } else if (running === null) {
      throw new MidiError(`data byte 0x${status.toString(16)} with no running status at byte ${off}`);
    } else {
      status = running;
    }
    const n = CHANNEL_LEN[status & 0xf0];
    if (off + n > end) {
      throw new MidiError(`truncated channel message at byte ${off}`);
    }
    yield { tick, status, metaType: -1, dataOff: off, dataLen: n };
    off += n;
  }
}

interface Chunk {
  fourcc: string;
  bodyStart: number;
  bodyEnd: number;
}

function readHeader(data: Buffer): { format: number; division: number;
    chunks: Chunk[] } {
  if (data.length < 14 || data.toString('latin1', 0, 4) !== 'MThd') {
    throw new MidiError('not a standard MIDI file: missing MThd at byte 0');
  }
  const hlen = data.readUInt32BE(4);
  if (hlen < 6) throw new MidiError(`header length ${hlen} below 6`);
  const format = data.readUInt16BE(8);
  const ntrks = data.readUInt16BE(10);
  const division = data.readUInt16BE(12);
  if (format !== 0 && format !== 1) {
    throw new MidiError(`format ${format} unsupported (only 0 and 1)`);
  }
  if (division & 0x8000) throw new MidiError('SMPTE time division unsupported');
  if (division === 0) throw new MidiError('ticks per quarter must be positive');

  const chunks: Chunk[] = [];
  let off = 8 + hlen;
  let tracksSeen = 0;
  while (off < data.length && tracksSeen < ntrks) {
    if (off + 8 > data.length) {
      throw new MidiError(`truncated chunk header at byte ${off}`);
    }
    const fourcc = data.toString('latin1', off, off + 4);
    const length = data.readUInt32BE(off + 4);
    const bodyStart = off + 8;
    const bodyEnd = bodyStart + length;
    if (bodyEnd > data.length) {
      throw new MidiError(`chunk runs past end of file at byte ${off}`);
    }
    chunks.push({ fourcc, bodyStart, bodyEnd });
    if (fourcc === 'MTrk') tracksSeen += 1;
    off = bodyEnd;
  }
  if (tracksSeen === 0) throw new MidiError('no MTrk chunks found');
  return { format, division, chunks };
}

/** Piecewise-linear tick to second conversion over a tempo map. */
class TickClock {
  private ticks: number[];
  private tempi: number[];
  private seconds: number[];

  constructor(tempoMap: Array<[number, number]>, private tpq: number) {
    this.ticks = tempoMap.map(([t]) => t);
    this.tempi = tempoMap.map(([, us]) => us);
    this.seconds = [0];
    for (let i = 1; i < this.ticks.length; i++) {
      const dt = this.ticks[i] - this.ticks[i - 1];
      this.seconds.push(
        this.seconds[i - 1] + dt * this.tempi[i - 1] / (this.tpq * 1e6));
    }
  }

  sec(tick: number): number {
    let i = this.ticks.length - 1;
    while (i > 0 && this.ticks[i] > tick) i--;
    return this.seconds[i] + (tick - this.ticks[i]) * this.tempi[i] / (this.tpq * 1e6);
  }

  tempoAtSec(sec: number): number {
    let i = this.seconds.length - 1;
    while (i > 0 && this.seconds[i] > sec) i--;
    return this.tempi[i];
  }
}

export function parseSmf(data: Buffer): Score {
  const { division, chunks } = readHeader(data);

  const rawTracks: Array<Array<{ tick: number; on: boolean; channel: number;
    pitch: number; velocity: number }>> = [];
  const tempi: Array<[number, number]> = [];
  for (const chunk of chunks) {
    if (chunk.fourcc !== 'MTrk') continue;
    const trackNotes: typeof rawTracks[number] = [];
    for (const ev of trackEvents(data, chunk.bodyStart, chunk.bodyEnd)) {
      if (ev.status === 0xff && ev.metaType === 0x51) {
        if (ev.dataLen !== 3) {
          throw new MidiError(`tempo event with length ${ev.dataLen} at byte ${ev.dataOff}`);
        }
        tempi.push([ev.tick, data.readUIntBE(ev.dataOff, 3)]);
      } else if ((ev.status & 0xf0) === 0x90 || (ev.status & 0xf0) === 0x80) {
        const pitch = data[ev.dataOff];
        const velocity = data[ev.dataOff + 1];
        const on = (ev.status & 0xf0) === 0x90 && velocity > 0;
        trackNotes.push({ tick: ev.tick, on, channel: ev.status & 0x0f,
          pitch, velocity });
      }
    }
    rawTracks.push(trackNotes);
  }

  // merge tempo events; last event at a tick wins, tick 0 gets a default
  const tempoByTick = new Map<number, number>();
  for (const [tick, us] of tempi.sort((a, b) => a[0] - b[0])) {
    tempoByTick.set(tick, us);
  }
  if (!tempoByTick.has(0)) tempoByTick.set(0, DEFAULT_TEMPO);
  const tempoMap = [...tempoByTick.entries()].sort((a, b) => a[0] - b[0]) as
    Array<[number, number]>;
  const clock = new TickClock(tempoMap, division);

  const notes: Note[] = [];
  let dropped = 0;
  for (const trackNotes of rawTracks) {
    const open = new Map<number, [number, number]>(); // channel<<8|pitch -> [tick, vel]
    for (const { tick, on, channel, pitch, velocity } of trackNotes) {
      const key = (channel << 8) | pitch;
      if (on) {
        const prev = open.get(key);
        if (prev !== undefined) {
          open.delete(key);
          dropped += close(notes, prev[0], tick, pitch, prev[1], clock);
        }
        open.set(key, [tick, velocity]);
      } else {
        const prev = open.get(key);
        if (prev !== undefined) {
          open.delete(key);
          dropped += close(notes, prev[0], tick, pitch, prev[1], clock);
        }
      }
    }
    dropped += open.size;
  }
  notes.sort((a, b) => a.onsetSec - b.onsetSec || a.pitch - b.pitch ||
    a.offsetSec - b.offsetSec);
  return { notes, tempoMap, ticksPerQuarter: division, droppedNotes: dropped };
}

function close(notes: Note[], onsetTick: number, offsetTick: number,
               pitch: number, velocity: number, clock: TickClock): number {
  if (offsetTick <= onsetTick || pitch < PITCH_MIN || pitch > PITCH_MAX) {
    return 1;
  }
  notes.push({ onsetSec: clock.sec(onsetTick), offsetSec: clock.sec(offsetTick),
    pitch, velocity });
  return 0;
}

/**
 * Serialize as format 0 at 480 ticks per quarter with one tempo event.
 * Constant-tempo scores round-trip within half a tick.
 */
export function writeSmf(score: Score): Buffer {
  const tempo = score.tempoMap.length > 0 ? score.tempoMap[0][1] : DEFAULT_TEMPO;
  const tpq = DEFAULT_TPQ;
  const secToTick = (sec: number) => Math.floor(sec * 1e6 / tempo * tpq + 0.5);

  // [tick, order (offs first), pitch, velocity, on]
  const events: Array<[number, number, number, number, boolean]> = [];
  for (const n of score.notes) {
    events.push([secToTick(n.onsetSec), 1, n.pitch, n.velocity, true]);
    events.push([secToTick(n.offsetSec), 0, n.pitch, 64, false]);
  }
  events.sort((a, b) => a[0] - b[0] || a[1] - b[1] || a[2] - b[2]);

  const body: number[] = [];
  body.push(...writeVlq(0), 0xff, 0x51, 0x03,
    (tempo >> 16) & 0xff, (tempo >> 8) & 0xff, tempo & 0xff);
  let clock = 0;
  for (const [tick, , pitch, velocity, on] of events) {
    body.push(...writeVlq(tick - clock), on ? 0x90 : 0x80, pitch, velocity);
    clock = tick;
  }
  body.push(...writeVlq(0), 0xff, 0x2f, 0x00);

  const header = Buffer.alloc(14);
  header.write('MThd', 0, 'latin1');
  header.writeUInt32BE(6, 4);
  header.writeUInt16BE(0, 8);
  header.writeUInt16BE(1, 10);
  header.writeUInt16BE(tpq, 12);
  const trackHeader = Buffer.alloc(8);
  trackHeader.write('MTrk', 0, 'latin1');
  trackHeader.writeUInt32BE(body.length, 4);
  return Buffer.concat([header, trackHeader, Buffer.from(body)]);
}

/**
 * Scale every note time by ``tempoScale`` by scaling the tempo map.
 *
 * Ticks are untouched; only FF 51 payloads change (plus an explicit
 * default-tempo event when the file had none), so everything else about
 * the file survives byte for byte.
 */
export function retimeSmf(data: Buffer, tempoScale: number): Buffer {
  if (!(tempoScale > 0)) {
    throw new MidiError(`tempo scale must be positive, got ${tempoScale}`);
  }
  const { chunks } = readHeader(data);
  const out = Buffer.from(data); // patched in place below

  let sawTempo = false;
  for (const chunk of chunks) {
    if (chunk.fourcc !== 'MTrk') continue;
    for (const ev of trackEvents(data, chunk.bodyStart, chunk.bodyEnd)) {
      if (ev.status !== 0xff || ev.metaType !== 0x51) continue;
      if (ev.dataLen !== 3) {
        throw new MidiError(`tempo event with length ${ev.dataLen} at byte ${ev.dataOff}`);
      }
      sawTempo = true;
      const scaled = Math.round(data.readUIntBE(ev.dataOff, 3) * tempoScale);
      if (scaled < 1 || scaled > 0xffffff) {
        throw new MidiError(`tempo ${scaled} out of range after scaling`);
      }
      out.writeUIntBE(scaled, ev.dataOff, 3);
    }
  }
  if (sawTempo || tempoScale === 1) return out;

  // no explicit tempo: all times ran at the default, so the scaled default
  // must become explicit; splice it at tick 0 of the first track
  const first = chunks.find((c) => c.fourcc === 'MTrk');
  if (first === undefined) throw new MidiError('no MTrk chunks found');
  const scaled = Math.round(DEFAULT_TEMPO * tempoScale);
  if (scaled < 1 || scaled > 0xffffff) {
    throw new MidiError(`tempo ${scaled} out of range after scaling`);
  }
  const insert = Buffer.from([0x00, 0xff, 0x51, 0x03,
    (scaled >> 16) & 0xff, (scaled >> 8) & 0xff, scaled & 0xff]);
  const pieces = [
    out.subarray(0, first.bodyStart - 4),
    Buffer.alloc(4),
    insert,
    out.subarray(first.bodyStart),
  ];
  pieces[1].writeUInt32BE(first.bodyEnd - first.bodyStart + insert.length, 0);
  return Buffer.concat(pieces);
}

/**
 * Notes intersecting [startSec, endSec), re-based so the window starts at
 * zero; overhanging notes are trimmed to the window. The tempo map
 * collapses to the tempo active at the window start.
 */
export function clipScore(score: Score, startSec: number, endSec: number): Score {
  if (startSec < 0 || endSec <= startSec) {
    throw new RangeError(`bad clip window [${startSec}, ${endSec})`);
  }
  const kept: Note[] = [];
  for (const n of score.notes) {
    if (n.onsetSec < endSec && n.offsetSec > startSec) {
      kept.push({
        onsetSec: Math.max(n.onsetSec, startSec) - startSec,
        offsetSec: Math.min(n.offsetSec, endSec) - startSec,
        pitch: n.pitch,
        velocity: n.velocity,
      });
    }
  }
  kept.sort((a, b) => a.onsetSec - b.onsetSec || a.pitch - b.pitch ||
    a.offsetSec - b.offsetSec);
  const clock = new TickClock(score.tempoMap, score.ticksPerQuarter);
  return { notes: kept, tempoMap: [[0, clock.tempoAtSec(startSec)]],
    ticksPerQuarter: score.ticksPerQuarter, droppedNotes: 0 };
}

/** Latest note offset, or zero for an empty score. */
export function scoreDuration(score: Score): number {
  let end = 0;
  for (const n of score.notes) end = Math.max(end, n.offsetSec);
  return end;
}
