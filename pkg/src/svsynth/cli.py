"""Command-line entry point: ``svsynth <command> ...``.

Failures print one line ``error: <category>: <message>`` to stderr. Usage
errors exit with status 2, runtime failures with status 1.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_mod
from .checkpoint import CheckpointError, ModelConfig, load_checkpoint
from .corpus import SyntheticCorpusSpec, gen_corpus, load_corpus
from .dsp import AudioError, read_wav, write_wav
from .embeddings import ReferenceTooShort
from .features import DomainMode, NoVoicedReference, dump_features_csv, extract_amplitude, extract_f0, f0_statistics
from .metrics import evaluate
from .pipeline import TrainConfig, TrainingDiverged, convert_svc_b, convert_svc_c, gradient_check, synthesize_svs, train
from .score import PitchRangeError, ScoreError, StyleToken, parse_alignment, parse_score

log = logging.getLogger("svsynth")

GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    """Argument parser whose errors carry a machine-readable category."""

    def error(self, message: str):
        if "required" in message:
            category = "missing-argument"
        elif "unrecognized arguments" in message:
            category = "unknown-flag"
        elif "invalid choice" in message:
            category = "invalid-choice"
        else:
            category = "invalid-argument"
        self.print_usage(sys.stderr)
        raise UsageError(category, message)


def _style(value: str) -> StyleToken:
    try:
        return StyleToken.parse(value)
    except (ValueError, KeyError) as exc:
        raise argparse.ArgumentTypeError(f"unknown style {value!r}; expected genre[:technique]") from exc


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _args_hash(args: argparse.Namespace) -> str:
    data = {k: (str(v) if not isinstance(v, (int, float, bool, type(None))) else v) for k, v in vars(args).items() if k != "func"}
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


def _banner(config_hash: str, seed) -> None:
    print(f"config_hash={config_hash} seed={seed}", file=sys.stderr)


# ---------------------------------------------------------------- commands


def cmd_gen_corpus(args) -> int:
    if args.spec:
        spec = SyntheticCorpusSpec.from_json(json.loads(Path(args.spec).read_text()))
    else:
        spec = SyntheticCorpusSpec(
            n_speakers=args.speakers,
            n_utterances=args.utterances,
            singing_fraction=args.singing_fraction,
            seed=args.seed,
        )
    _banner(hashlib.sha256(json.dumps(spec.to_json(), sort_keys=True).encode()).hexdigest(), spec.seed)
    path = gen_corpus(spec, args.out)
    print(json.dumps({"manifest": str(path), "items": spec.n_speakers * spec.n_utterances}))
    return 0


def cmd_train(args) -> int:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    model = {**data.get("model", {}), "variant": args.model}
    data["model"] = model
    for key in ("iterations", "batch_size", "seed", "learning_rate", "segment_frames", "checkpoint_every"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if args.mix is not None:
        data["mix"] = args.mix
    elif args.model == "svc-c":
        data["mix"] = False
    if args.model == "svc-c" and data.get("mix", True):
        raise UsageError("invalid-argument", "svc-c trains on singing only; use --mix off")
    config = TrainConfig.from_json(data)
    _banner(config.model.hash(), config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = load_corpus(args.corpus)
    with open(out / "train_log.jsonl", "w") as fh:

        def log_fn(rec):
            fh.write(json.dumps(rec) + "\n")
            print(json.dumps(rec), file=sys.stderr)

        result = train(config, items, out, log_fn=log_fn)
    (out / "train_config.json").write_text(json.dumps(config.to_json(), indent=1, sort_keys=True))
    print(json.dumps({"checkpoint": str(out / "final.ckpt"), "final_loss": result.losses[-1] if result.losses else None}))
    return 0


def _load(args) -> ckpt_mod.Checkpoint:
    return load_checkpoint(args.checkpoint)


def _write_output(audio, report: dict, out: str) -> None:
    write_wav(out, audio)
    Path(out).with_suffix(".json").write_text(json.dumps(report, indent=1, sort_keys=True))
    print(json.dumps({"wav": out, **report}, sort_keys=True))


def cmd_synth(args) -> int:
    ckpt = _load(args)
    _banner(ckpt.config_hash, args.seed)
    score = parse_score(Path(args.score).read_text())
    style = args.style or score.style
    lyrics = parse_alignment(Path(args.lyrics).read_text()) if args.lyrics else None
    audio, report = synthesize_svs(
        score, style, read_wav(args.ref), ckpt, args.steps, args.seed, not args.no_pitch_adjust, lyrics
    )
    _write_output(audio, report, args.out)
    return 0


def cmd_convert(args) -> int:
    ckpt = _load(args)
    _banner(ckpt.config_hash, args.seed)
    source, ref = read_wav(args.source), read_wav(args.ref)
    if args.model == "svc-b":
        if not args.lyrics:
            raise UsageError("missing-argument", "--lyrics is required for --model svc-b")
        lyrics = parse_alignment(Path(args.lyrics).read_text())
        audio, report = convert_svc_b(
            source, lyrics, args.style or StyleToken(), ref, ckpt, args.steps, args.seed, args.octave_adjust
        )
    else:
        audio, report = convert_svc_c(source, ref, ckpt, args.style, args.steps, args.seed, args.octave_adjust)
    _write_output(audio, report, args.out)
    return 0


def cmd_extract(args) -> int:
    _banner(_args_hash(args), None)
    audio = read_wav(args.audio)
    mode = DomainMode.parse(args.mode)
    want_f0 = args.f0 or not (args.f0 or args.amp)
    want_amp = args.amp or not (args.f0 or args.amp)
    f0 = extract_f0(audio, mode)
    amp = extract_amplitude(audio, mode)
    summary: dict = {"frames": len(f0), "mode": mode.value}
    if want_f0:
        summary["voiced_fraction"] = float(f0.voiced.mean())
        try:
            summary.update(f0_statistics(f0))
        except NoVoicedReference:
            summary["median_hz"] = None
    if want_amp:
        summary["amplitude_max"] = float(amp.values.max())
        summary["amplitude_mean"] = float(amp.values.mean())
    if args.out:
        dump_features_csv(args.out, f0, amp)
        summary["csv"] = args.out
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    _banner(_args_hash(args), None)
    report = evaluate(read_wav(args.ref), read_wav(args.hyp), DomainMode.parse(args.mode))
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = ModelConfig(variant=args.model)
    _banner(cfg.hash(), args.seed)
    worst = 0.0
    worst_name = ""
    for d in range(args.draws):
        errors = gradient_check(args.seed + d, variant=args.model)
        name, err = max(errors.items(), key=lambda kv: kv[1])
        if err >= worst:
            worst, worst_name = err, name
    status = "PASS" if worst < GRADCHECK_TOLERANCE else "FAIL"
    print(f"max_relative_error={worst:.3e} block={worst_name} draws={args.draws} {status}")
    return 0 if status == "PASS" else 1


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="svsynth", description="Zero-shot singing synthesis and conversion toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-corpus", help="render a synthetic multi-speaker corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--speakers", type=int, default=2)
    g.add_argument("--utterances", type=int, default=10)
    g.add_argument("--singing-fraction", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--spec", help="JSON corpus spec (overrides the flags above)")
    g.set_defaults(func=cmd_gen_corpus)

    t = sub.add_parser("train", help="train a model on a corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--model", choices=("svs", "svc-b", "svc-c"), default="svs")
    t.add_argument("--mix", type=_on_off, default=None, help="on|off (default on, off for svc-c)")
    t.add_argument("--config", help="JSON training config")
    t.add_argument("--iterations", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--segment-frames", type=int)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="score + speech reference -> singing")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--score", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--style", type=_style)
    s.add_argument("--lyrics", help="explicit alignment JSON (default: derived from the score)")
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-pitch-adjust", action="store_true")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("convert", help="re-voice a singing recording")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--source", required=True)
    c.add_argument("--ref", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--model", choices=("svc-b", "svc-c"), default="svc-c")
    c.add_argument("--lyrics")
    c.add_argument("--style", type=_style)
    c.add_argument("--steps", type=int, default=50)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--octave-adjust", action="store_true", help="shift source F0 by octaves toward the reference")
    c.set_defaults(func=cmd_convert)

    e = sub.add_parser("extract", help="F0 and amplitude features")
    e.add_argument("audio")
    e.add_argument("--f0", action="store_true")
    e.add_argument("--amp", action="store_true")
    e.add_argument("--mode", choices=("singing", "speech"), default="singing")
    e.add_argument("--out", help="per-frame CSV")
    e.set_defaults(func=cmd_extract)

    v = sub.add_parser("eval", help="objective metrics between two recordings")
    v.add_argument("--ref", required=True)
    v.add_argument("--hyp", required=True)
    v.add_argument("--mode", choices=("singing", "speech"), default="singing")
    v.add_argument("--out")
    v.set_defaults(func=cmd_eval)

    k = sub.add_parser("gradcheck", help="finite-difference check of all parameter gradients")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--draws", type=int, default=1)
    k.add_argument("--model", choices=("svs", "svc-b", "svc-c"), default="svs")
    k.set_defaults(func=cmd_gradcheck)
    return p


_RUNTIME_CATEGORIES = [
    (ReferenceTooShort, "reference-too-short"),
    (NoVoicedReference, "no-voiced-reference"),
    (PitchRangeError, "pitch-out-of-range"),
    (ScoreError, "invalid-score"),
    (CheckpointError, "checkpoint"),
    (AudioError, "audio"),
    (TrainingDiverged, "diverged"),
    (FileNotFoundError, "file-not-found"),
    (json.JSONDecodeError, "invalid-json"),
    (OSError, "io"),
    (ValueError, "invalid-input"),
]


def _one_line(text: str) -> str:
    return re.sub(r"\s+", " ", str(text)).strip()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
        np.seterr(all="ignore")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc.category}: {_one_line(exc)}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - map every failure to a category
        for cls, category in _RUNTIME_CATEGORIES:
            if isinstance(exc, cls):
                print(f"error: {category}: {_one_line(exc)}", file=sys.stderr)
                return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
