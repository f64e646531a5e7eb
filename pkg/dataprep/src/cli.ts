/**
 * Command line entry points.
 *
 * Exit codes: 0 success, 1 usage, 2 bad input data. Messages go to
 * stderr; stdout carries only the one-line result summaries.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';
import { parseArgs } from 'node:util';

import { readAvi, VideoError } from './avi.js';
import { extractClips, runPrep, PrepError, TrimWindow } from './prep.js';
import { retimeSmf, MidiError } from './smf.js';
import { writeVmtf, CLIP_SECONDS } from './vmtf.js';

const USAGE = `usage: dataprep <command> [options]

commands:
  extract-frames VIDEO -o DIR        one VMTF clip per full ${CLIP_SECONDS}s window
  retime-midi IN -s SCALE -o OUT     scale all note times by SCALE
  prep --video V --midi M -o DIR     build paired fragments and a manifest
       [--tempo-scale S] [--trim A:B ...] [--seed N] [--song-id ID]
`;

class UsageError extends Error {}

function parseTrim(text: string): TrimWindow {
  const m = /^([0-9.]+):([0-9.]+)$/.exec(text);
  if (m === null) {
    throw new UsageError(`trim must look like START:END, got '${text}'`);
  }
  return { start: Number(m[1]), end: Number(m[2]) };
}

function positive(name: string, text: string): number {
  const value = Number(text);
  if (!(value > 0)) {
    throw new UsageError(`${name} must be a positive number, got '${text}'`);
  }
  return value;
}

function cmdExtractFrames(argv: string[]): void {
  const { values, positionals } = parseArgs({
    args: argv,
    options: { out: { type: 'string', short: 'o' } },
    allowPositionals: true,
  });
  if (positionals.length !== 1 || values.out === undefined) {
    throw new UsageError('extract-frames needs VIDEO and -o DIR');
  }
  const video = readAvi(fs.readFileSync(positionals[0]));
  const { clips, skippedTailSec } = extractClips(video);
  if (skippedTailSec > 0) {
    console.error(`skipping ${skippedTailSec.toFixed(2)}s tail, ` +
      'shorter than a fragment');
  }
  fs.mkdirSync(values.out, { recursive: true });
  for (let i = 0; i < clips.length; i++) {
    const name = `clip_${String(i).padStart(4, '0')}.vmtf`;
    fs.writeFileSync(path.join(values.out, name), writeVmtf(clips[i]));
  }
  console.log(`wrote ${clips.length} clips to ${values.out}`);
}

function cmdRetimeMidi(argv: string[]): void {
  const { values, positionals } = parseArgs({
    args: argv,
    options: {
      scale: { type: 'string', short: 's' },
      out: { type: 'string', short: 'o' },
    },
    allowPositionals: true,
  });
  if (positionals.length !== 1 || values.scale === undefined ||
      values.out === undefined) {
    throw new UsageError('retime-midi needs IN, -s SCALE and -o OUT');
  }
  const scale = positive('scale', values.scale);
  fs.writeFileSync(values.out, retimeSmf(fs.readFileSync(positionals[0]), scale));
  console.log(`wrote ${values.out} at tempo scale ${scale}`);
}

function cmdPrep(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      video: { type: 'string' },
      midi: { type: 'string' },
      out: { type: 'string', short: 'o' },
      'tempo-scale': { type: 'string' },
      trim: { type: 'string', multiple: true },
      seed: { type: 'string' },
      'song-id': { type: 'string' },
    },
  });
  if (values.video === undefined || values.midi === undefined ||
      values.out === undefined) {
    throw new UsageError('prep needs --video, --midi and -o DIR');
  }
  const result = runPrep({
    video: values.video,
    midi: values.midi,
    tempoScale: values['tempo-scale'] === undefined
      ? 1 : positive('tempo-scale', values['tempo-scale']),
    trims: (values.trim ?? []).map(parseTrim),
    outDir: values.out,
    seed: values.seed === undefined ? 0 : Number(values.seed),
    songId: values['song-id'],
  });
  console.log(`wrote ${result.pairCount} pairs (split ${result.split}) ` +
    `to ${result.manifestPath}`);
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    switch (command) {
      case 'extract-frames':
        cmdExtractFrames(rest);
        return 0;
      case 'retime-midi':
        cmdRetimeMidi(rest);
        return 0;
      case 'prep':
        cmdPrep(rest);
        return 0;
      case undefined:
      case 'help':
      case '--help':
      case '-h':
        process.stderr.write(USAGE);
        return command === undefined ? 1 : 0;
      default:
        throw new UsageError(`unknown command '${command}'`);
    }
  } catch (err) {
    if (err instanceof UsageError ||
        (err instanceof TypeError && err.message.includes('option'))) {
      console.error(`error: ${err.message}`);
      process.stderr.write(USAGE);
      return 1;
    }
    if (err instanceof VideoError || err instanceof MidiError ||
        err instanceof PrepError ||
        (err as NodeJS.ErrnoException).code !== undefined) {
      console.error(`error: ${(err as Error).message}`);
      return 2;
    }
    throw err;
  }
}
