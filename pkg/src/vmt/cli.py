"""Command line front end.

Thin argparse layer over the library: every subcommand is a direct call
into one module, all randomness comes from explicit seed flags, and
nothing is written outside the paths given on the command line.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .codec import (CodecConfig, CodecError, decode, encode, id_to_token,
                    parse_token_text, token_to_id)
from .data import (MAX_TOKENS, DataError, load_manifest, read_vmtf,
                   synth_dataset)
from .gradcheck import DEFAULT_TOL, full_suite
from .infer import GEN_MODES, GenConfig, generate_detail
from .midi import MidiError, parse_smf, write_smf
from .models import ModelConfig, build_model, load_checkpoint
from .train import AdamState, NumericError, TrainConfig, train_loop
from .viz import RollSpec, piano_roll_svg

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return value


def cmd_codec_encode(args) -> int:
    score = parse_smf(Path(args.input).read_bytes())
    ids = encode(score)
    Path(args.out).write_text(
        "".join(id_to_token(i).text() + "\n" for i in ids))
    print(f"wrote {len(ids)} tokens to {args.out}")
    return EXIT_OK


def _read_token_lines(path: Path) -> list[int]:
    ids = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            ids.append(token_to_id(parse_token_text(line)))
        except CodecError as e:
            raise CodecError(f"{path}: line {lineno}: {e}") from e
    return ids


def cmd_codec_decode(args) -> int:
    ids = _read_token_lines(Path(args.input))
    score, warnings = decode(ids)
    Path(args.out).write_bytes(write_smf(score))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(score.notes)} notes to {args.out}, "
          f"{len(warnings)} warnings")
    return EXIT_OK


def cmd_dataset_synth(args) -> int:
    counts = None
    if args.splits is not None:
        parts = args.splits.split(",")
        if len(parts) != 3 or not all(p.strip().isdigit() for p in parts):
            raise ValueError("--splits must be three integers: TRAIN,VAL,TEST")
        counts = tuple(int(p) for p in parts)
    manifest = synth_dataset(args.out, args.count, seed=args.seed,
                             counts=counts)
    print(f"wrote {len(manifest.entries)} pairs under {args.out}")
    return EXIT_OK


def cmd_dataset_validate(args) -> int:
    manifest = load_manifest(args.manifest)
    per_split = {"train": 0, "validation": 0, "test": 0}
    bad = 0
    for entry in manifest.entries:
        clip_path = manifest.resolve(entry.clip)
        midi_path = manifest.resolve(entry.midi)
        try:
            read_vmtf(clip_path.read_bytes())
        except (DataError, OSError) as e:
            print(f"{clip_path}: {e}", file=sys.stderr)
            bad += 1
            continue
        try:
            tokens = encode(parse_smf(midi_path.read_bytes()))
        except (MidiError, CodecError, OSError) as e:
            print(f"{midi_path}: {e}", file=sys.stderr)
            bad += 1
            continue
        if len(tokens) > MAX_TOKENS:
            print(f"{midi_path}: {len(tokens)} tokens exceeds {MAX_TOKENS}",
                  file=sys.stderr)
            bad += 1
            continue
        per_split[entry.split] += 1
    if bad:
        print(f"{bad} of {len(manifest.entries)} pairs failed validation",
              file=sys.stderr)
        return EXIT_DATA
    print(f"{len(manifest.entries)} pairs ok "
          f"(train {per_split['train']}, validation {per_split['validation']}, "
          f"test {per_split['test']})")
    return EXIT_OK


def _train_config(d: dict) -> TrainConfig:
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ValueError(f"unknown train config fields: {unknown}")
    if "steps" not in d:
        raise ValueError("train config needs 'steps'")
    try:
        return TrainConfig(**d)
    except TypeError as e:
        raise ValueError(f"bad train config: {e}") from e


def cmd_train(args) -> int:
    raw = json.loads(Path(args.config).read_text())
    known = {"model", "train", "manifest", "out_dir", "codec", "model_seed",
             "resume"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown config fields: {unknown}")
    missing = sorted({"model", "train", "manifest", "out_dir"} - set(raw))
    if missing:
        raise ValueError(f"config is missing fields: {missing}")

    model_config = ModelConfig.from_dict(raw["model"])
    train_config = _train_config(raw["train"])
    codec_config = CodecConfig(**raw.get("codec", {}))
    manifest = load_manifest(raw["manifest"])

    if raw.get("resume"):
        model, adam_dict, ckpt_codec = load_checkpoint(raw["resume"])
        if model.config != model_config:
            raise ValueError(f"{raw['resume']}: checkpoint model config "
                             "disagrees with the config file")
        if adam_dict is None:
            raise ValueError(f"{raw['resume']}: checkpoint has no optimizer "
                             "state to resume from")
        adam = AdamState.from_dict(model.named_params(), adam_dict)
        start_step = adam.step + 1
        codec_config = ckpt_codec
    else:
        model = build_model(model_config, seed=raw.get("model_seed", 0))
        adam = None
        start_step = 1

    records = train_loop(model, manifest, train_config, raw["out_dir"],
                         adam=adam, start_step=start_step,
                         codec_config=codec_config)
    last = records[-1] if records else {"step": start_step - 1,
                                        "train_loss": float("nan")}
    print(f"finished at step {last['step']}, "
          f"train_loss {last['train_loss']:.4f}, "
          f"checkpoint in {raw['out_dir']}")
    return EXIT_OK


def cmd_generate(args) -> int:
    model, _, codec_config = load_checkpoint(args.ckpt)
    clip = read_vmtf(Path(args.clip).read_bytes())
    config = GenConfig(mode=args.mode, temperature=args.temp, seed=args.seed)
    result = generate_detail(model, clip, config)
    score, warnings = decode(result.ids, codec_config)
    Path(args.out).write_bytes(write_smf(score))
    sidecar = Path(str(args.out) + ".json")
    sidecar.write_text(json.dumps({
        "tokens": result.ids,
        "warnings": warnings,
        "duration_sec": score.duration(),
        "ended_naturally": result.ended_naturally,
        "mode": config.mode,
        "temperature": config.temperature,
        "seed": config.seed,
    }, indent=2) + "\n")
    print(f"wrote {len(score.notes)} notes to {args.out} "
          f"({len(result.ids)} tokens, {len(warnings)} warnings)")
    return EXIT_OK


def cmd_viz(args) -> int:
    score = parse_smf(Path(args.input).read_bytes())
    Path(args.out).write_text(piano_roll_svg(score, RollSpec()))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = full_suite(seed=args.seed)
    width = max(len(name) for name in report)
    failures = 0
    for name, err in report.items():
        ok = err < DEFAULT_TOL
        failures += 0 if ok else 1
        print(f"{name:<{width}}  {err:.3e}  {'ok' if ok else 'FAIL'}")
    print(f"worst {max(report.values()):.3e}, tolerance {DEFAULT_TOL:.0e}")
    if failures:
        print(f"{failures} checks failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vmt", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codec-encode",
                       help="tokenize a MIDI file, one token per line")
    p.add_argument("input", metavar="IN.mid")
    p.add_argument("-o", "--out", required=True, metavar="OUT.tokens")
    p.set_defaults(fn=cmd_codec_encode)

    p = sub.add_parser("codec-decode",
                       help="turn a token file back into MIDI")
    p.add_argument("input", metavar="IN.tokens")
    p.add_argument("-o", "--out", required=True, metavar="OUT.mid")
    p.set_defaults(fn=cmd_codec_decode)

    p = sub.add_parser("dataset-synth",
                       help="write a deterministic synthetic dataset")
    p.add_argument("-n", "--pairs", dest="count", type=_positive_int,
                   required=True, help="number of clip/MIDI pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", default=None, metavar="TRAIN,VAL,TEST",
                   help="exact split sizes in manifest order")
    p.add_argument("-o", "--out", required=True, metavar="DIR")
    p.set_defaults(fn=cmd_dataset_synth)

    p = sub.add_parser("dataset-validate",
                       help="check every pair listed in a manifest")
    p.add_argument("manifest", metavar="MANIFEST")
    p.set_defaults(fn=cmd_dataset_validate)

    p = sub.add_parser("train", help="train or resume from a JSON config")
    p.add_argument("--config", required=True, metavar="FILE",
                   help="JSON with model/train/manifest/out_dir"
                        " (README documents the schema)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate",
                       help="generate MIDI for a clip from a checkpoint")
    p.add_argument("--ckpt", required=True, metavar="FILE")
    p.add_argument("--clip", required=True, metavar="FILE")
    p.add_argument("--mode", choices=GEN_MODES, default="greedy")
    p.add_argument("--temp", type=_positive_float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, metavar="OUT.mid")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("viz", help="render a MIDI file as an SVG piano roll")
    p.add_argument("input", metavar="IN.mid")
    p.add_argument("-o", "--out", required=True, metavar="OUT.svg")
    p.set_defaults(fn=cmd_viz)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every op and model")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, MidiError, CodecError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
