export { readAvi, Video, VideoError } from './avi.js';
export { resizeRgb } from './resize.js';
export { clipScore, parseSmf, retimeSmf, scoreDuration, writeSmf,
  MidiError, Note, Score, DEFAULT_TEMPO, DEFAULT_TPQ, PITCH_MIN,
  PITCH_MAX } from './smf.js';
export { excise, extractClips, keptSegments, runPrep, splitForSong,
  validateJob, PrepError, PrepJob, PrepResult, TrimWindow, SPLITS,
  SPLIT_WEIGHTS } from './prep.js';
export { readVmtf, writeVmtf, ClipPixels, CLIP_FRAMES, CLIP_HEIGHT,
  CLIP_WIDTH, CLIP_CHANNELS, CLIP_SECONDS } from './vmtf.js';
