"""Command line entry point: generate, synth, features, train, eval, experiment."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import random
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from . import grapheme
from .audio import read_wav, write_wav
from .experiment import ExperimentConfig, ExperimentError, render_clips, run_experiment
from .features import FeatureError, extract, read_features, write_features
from .model import NAMED_CONFIGS, ModelError, TrainConfig, init, load_checkpoint, save_checkpoint, score_sequences, train
from .synth import SynthError

logger = logging.getLogger("confusable_kws")

EXIT_FAILURE = 1
EXIT_USAGE = 2


class CliError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse with a JSON error line on stderr for usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        sys.exit(EXIT_USAGE)


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def ratio(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {value}")
    return value


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON file of option defaults")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return common


def build_parser() -> tuple[Parser, dict[str, argparse.ArgumentParser]]:
    common = _common()
    parser = Parser(prog="confusable-kws", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)
    subs = {}

    p = subs["generate"] = sub.add_parser("generate", parents=[common], help="confusable phrases or transcript datasets")
    p.add_argument("--kind", choices=["confusables", "transcripts"], default="confusables")
    p.add_argument("--keyword", default="hey google")
    p.add_argument("--distance", type=positive_int, default=1)
    p.add_argument("--count", type=nonnegative_int, default=0, help="0 enumerates the full set")
    p.add_argument("--sources", type=positive_int, default=100, help="source examples (transcripts)")
    p.add_argument("--confusables", type=Path, help="confusable JSONL to mix into negatives (transcripts)")
    p.add_argument("--mix-ratio", type=ratio, default=0.10)
    p.add_argument("--placeholder", default=ds.DEFAULT_PLACEHOLDER)

    p = subs["synth"] = sub.add_parser("synth", parents=[common], help="transcript JSONL to WAV variations")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--dataset", help="dataset directory name (default: input file stem)")
    p.add_argument("--variations", type=positive_int, default=25)
    p.add_argument("--snr", type=float, nargs=2, default=(5.0, 20.0), metavar=("LO", "HI"))
    p.add_argument("--gain", type=float, nargs=2, default=(-6.0, 6.0), metavar=("LO", "HI"))
    p.add_argument("--noise", choices=sorted(ds.NOISE_SOURCES), default="white")
    p.add_argument("--noise-file", type=Path)

    p = subs["features"] = sub.add_parser("features", parents=[common], help="WAV files to feature cache")
    p.add_argument("--input", type=Path, required=True, help="directory searched recursively for .wav")

    p = subs["train"] = sub.add_parser("train", parents=[common], help="train on cached features")
    p.add_argument("--positive", type=Path, action="append", required=True, help="feature directory labelled 1")
    p.add_argument("--negative", type=Path, action="append", required=True, help="feature directory labelled 0")
    p.add_argument("--model", choices=sorted(NAMED_CONFIGS), default="desk")
    p.add_argument("--steps", type=positive_int, default=5000)
    p.add_argument("--batch-size", type=positive_int, default=16)
    p.add_argument("--learning-rate", type=float, default=0.02)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--checkpoints", type=positive_int, default=10)
    p.add_argument("--float32", action="store_true")

    p = subs["eval"] = sub.add_parser("eval", parents=[common], help="score checkpoints and report AUC")
    p.add_argument("--checkpoints", type=Path, required=True, help="directory of ckpt_*.bin")
    p.add_argument("--positive", type=Path, action="append", required=True)
    p.add_argument("--negative", type=Path, action="append", required=True)
    p.add_argument("--baseline", type=Path, help="baseline report JSON for (1 - AUC) ratios")

    subs["experiment"] = sub.add_parser("experiment", parents=[common], help="baseline vs confusable training grid")
    return parser, subs


def parse_args(argv=None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    config = getattr(args, "config", None)
    if config is not None and args.command != "experiment":
        try:
            defaults = json.loads(config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read --config {config}: {exc}")
        if not isinstance(defaults, dict):
            parser.error("--config must hold a JSON object")
        sub = subs[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known
        if unknown:
            parser.error(f"unknown keys in --config: {sorted(unknown)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    args.seed = getattr(args, "seed", None)
    args.config = config
    args.out = getattr(args, "out", None)
    args.verbose = getattr(args, "verbose", False)
    return args


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _require_out(args) -> Path:
    if args.out is None:
        raise CliError(f"{args.command} needs --out")
    return args.out


def _report(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


# ----------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    out = _require_out(args)
    seed = _seed(args)
    if args.kind == "confusables":
        if args.count == 0:
            items = list(grapheme.enumerate_exact(args.keyword, args.distance))
        else:
            items = grapheme.sample_unique(args.keyword, args.distance, args.count, seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        written = grapheme.write_jsonl(items, out)
        requested = "all" if args.count == 0 else args.count
        _report({"written": written, "requested": requested, "shortfall": 0 if args.count == 0 else args.count - written})
        return 0

    out.mkdir(parents=True, exist_ok=True)
    sources = ds.make_sources(args.sources, seed, args.placeholder)
    positives = [ds.make_positive(s, args.keyword, args.placeholder) for s in sources]
    negatives = [ds.make_negative(s, args.placeholder) for s in sources]
    if args.confusables is not None:
        confs = grapheme.read_jsonl(args.confusables)
        if not confs:
            raise CliError(f"{args.confusables} holds no confusables")
        # each source carries one confusable, cycling through the list
        pool = [ds.make_confusable(s, confs[i % len(confs)], args.keyword, args.placeholder) for i, s in enumerate(sources)]
        negatives = ds.mix_negatives(negatives, pool, ds.MixSpec(args.mix_ratio, seed))
    # input files enter the hash by content so manifests do not depend on where data lives
    settings = {
        k: (hashlib.sha256(v.read_bytes()).hexdigest() if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items()) if k not in ("out", "config", "verbose")
    }
    counts = {}
    for split, items in (("positive", positives), ("negative", negatives)):
        counts[split] = ds.write_jsonl(items, out / f"{split}.jsonl")
        ds.write_manifest(out / f"{split}.manifest.json", split, counts[split], settings, seed)
    _report(counts)
    return 0


def cmd_synth(args) -> int:
    out = _require_out(args)
    examples = ds.read_jsonl(args.input)
    spec = ds.AugmentSpec(
        args.variations, tuple(args.snr), tuple(args.gain), args.noise,
        str(args.noise_file) if args.noise_file else None, seed=_seed(args),
    )
    name = args.dataset or args.input.stem
    target = out / name
    target.mkdir(parents=True, exist_ok=True)
    written = 0
    for ex in examples:
        for i, clip in enumerate(render_clips(ex, spec)):
            write_wav(target / f"{ex.id}_{i}.wav", clip)
            written += 1
    settings = dict(vars(spec), noise_file=hashlib.sha256(args.noise_file.read_bytes()).hexdigest() if args.noise_file else None)
    ds.write_manifest(out / f"{name}.manifest.json", name, written, settings, spec.seed)
    _report({"dataset": name, "examples": len(examples), "clips": written})
    return 0


def cmd_features(args) -> int:
    out = _require_out(args)
    wavs = sorted(args.input.rglob("*.wav"))
    if not wavs:
        raise CliError(f"no .wav files under {args.input}")
    for wav in wavs:
        target = out / wav.relative_to(args.input).with_suffix(".feat")
        target.parent.mkdir(parents=True, exist_ok=True)
        write_features(target, extract(read_wav(wav)))
    _report({"files": len(wavs)})
    return 0


def load_feature_dirs(dirs) -> list[tuple[str, np.ndarray]]:
    out = []
    for d in dirs:
        files = sorted(Path(d).rglob("*.feat"))
        if not files:
            raise CliError(f"no .feat files under {d}")
        out += [(f.stem, read_features(f)) for f in files]
    return out


def cmd_train(args) -> int:
    out = _require_out(args)
    seed = _seed(args)
    pos, neg = load_feature_dirs(args.positive), load_feature_dirs(args.negative)
    train_set = [(x, 1) for _, x in pos] + [(x, 0) for _, x in neg]
    model = init(NAMED_CONFIGS[args.model](), seed, dtype=np.float32 if args.float32 else np.float64)
    model.normalizer_from([x for x, _ in train_set])
    config = TrainConfig(args.steps, args.batch_size, args.learning_rate, args.momentum, seed, args.checkpoints)
    out.mkdir(parents=True, exist_ok=True)
    checkpoints = train(model, train_set, config)
    for i, ck in enumerate(checkpoints, 1):
        save_checkpoint(out / f"ckpt_{i:02d}.bin", ck.model, ck.step)
    _report({"checkpoints": len(checkpoints), "final_train_loss": checkpoints[-1].train_loss})
    return 0


def cmd_eval(args) -> int:
    out = _require_out(args)
    paths = sorted(args.checkpoints.glob("ckpt_*.bin"))
    if not paths:
        raise CliError(f"no checkpoints under {args.checkpoints}")
    pos, neg = load_feature_dirs(args.positive), load_feature_dirs(args.negative)
    baseline = ev.read_report_json(args.baseline) if args.baseline else None
    out.mkdir(parents=True, exist_ok=True)
    aucs, curves = [], []
    for path in paths:
        model, _ = load_checkpoint(path)
        sp = score_sequences(model, [x for _, x in pos])
        sn = score_sequences(model, [x for _, x in neg])
        records = [ev.ScoreRecord(k, "positive", float(s)) for (k, _), s in zip(pos, sp)]
        records += [ev.ScoreRecord(k, "negative", float(s)) for (k, _), s in zip(neg, sn)]
        ev.write_scores_tsv(out / f"scores_{path.stem}.tsv", records)
        curves.append(ev.roc(sp, sn))
        aucs.append(ev.auc(curves[-1]))
    report = ev.aggregate_checkpoints(aucs)
    report.extra["checkpoints"] = [p.name for p in paths]
    ev.write_roc_csv(out / "roc_median.csv", curves[report.median_checkpoint_index])
    ev.write_report_json(out / "report.json", report, baseline)
    _report({"mean_auc": report.mean_auc, "median_auc": report.median_auc})
    return 0


def cmd_experiment(args) -> int:
    out = _require_out(args)
    config = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = ExperimentConfig(**{**config.to_dict(), "seeds": (args.seed,)})
    _, rows, failures = run_experiment(config, out)
    for row in rows:
        _report(row)
    if failures:
        print(json.dumps({"error": "cell-failures", "cells": failures}, sort_keys=True), file=sys.stderr)
        return EXIT_FAILURE
    return 0


COMMANDS = {
    "generate": cmd_generate, "synth": cmd_synth, "features": cmd_features,
    "train": cmd_train, "eval": cmd_eval, "experiment": cmd_experiment,
}

EXPECTED_ERRORS = (
    CliError, grapheme.GraphemeError, ds.DatasetError, SynthError, FeatureError, ModelError,
    ev.EvaluationError, ExperimentError, ValueError, OSError, KeyError,
)


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s", stream=sys.stderr)
    random.seed(_seed(args))
    try:
        return COMMANDS[args.command](args)
    except EXPECTED_ERRORS as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
