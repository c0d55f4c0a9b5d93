"""End-to-end desk-scale experiments: baseline vs confusable-augmented training.

For each seed the driver builds train and held-out sources, renders every
transcript with the toy synthesizer (reusing the source's voice), adds one
noise variation, extracts features, trains one model per grid cell, and
scores every checkpoint on held-out positives, plain negatives, and a
distance-3 confusable set that never overlaps the training confusables.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from . import grapheme
from .audio import AudioClip
from .features import DEFAULT_FEATURES, extract
from .model import NAMED_CONFIGS, TrainConfig, init, score_sequences, train
from .synth import random_voice, synth

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = [
    "cell_id", "edit_distance", "confusable_count",
    "auc_eval_pos_vs_neg", "auc_eval_pos_vs_conf", "one_minus_auc_ratio_vs_baseline",
]


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    keyword: str = "hey google"
    edit_distances: tuple[int, ...] = (3,)
    confusable_counts: tuple[int, ...] = (10, 1000)
    include_baseline: bool = True
    mix_ratio: float = 0.10
    seeds: tuple[int, ...] = (0, 1, 2)
    train_per_class: int = 2000
    eval_per_class: int = 300
    eval_confusables: int = 500
    eval_distance: int = 3
    model: str = "desk"
    steps: int = 5000
    batch_size: int = 16
    learning_rate: float = 0.02
    momentum: float = 0.9
    checkpoint_count: int = 10
    float32: bool = True
    variation_count: int = 1
    snr_range_db: tuple[float, float] = (5.0, 20.0)
    gain_range_db: tuple[float, float] = (-6.0, 6.0)
    noise_source: str = "white"
    placeholder: str = ds.DEFAULT_PLACEHOLDER

    def __post_init__(self):
        for name in ("edit_distances", "confusable_counts", "seeds", "snr_range_db", "gain_range_db"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not set(self.edit_distances) <= {1, 2, 3}:
            raise ExperimentError("edit distances must come from {1, 2, 3}")
        if any(c < 1 for c in self.confusable_counts):
            raise ExperimentError("confusable counts must be positive")
        if min(self.train_per_class, self.eval_per_class, self.eval_confusables, self.steps) < 1:
            raise ExperimentError("dataset sizes and steps must be positive")
        if self.model not in NAMED_CONFIGS:
            raise ExperimentError(f"unknown model config {self.model!r}")
        if not self.seeds:
            raise ExperimentError("at least one seed is required")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ExperimentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def cells(self) -> list[tuple[str, int | None, int | None]]:
        cells = [("baseline", None, None)] if self.include_baseline else []
        cells += [(f"d{d}_n{n}", d, n) for d in self.edit_distances for n in self.confusable_counts]
        return cells


def _salt(text: str) -> int:
    return int(hashlib.sha1(text.encode()).hexdigest()[:8], 16)


def render_clips(example: ds.TranscriptExample, augment: ds.AugmentSpec) -> list[AudioClip]:
    """Synthesize with the source's voice, then add noise variations."""
    voice = random_voice(ds.voice_seed_of(example))
    clip = synth(example.transcript, voice, seed=_salt(example.id))
    return ds.augment_variations(clip, augment, salt=_salt(example.id))


def render_features(examples: Sequence[ds.TranscriptExample], augment: ds.AugmentSpec) -> list[np.ndarray]:
    """Features for every variation; variations of one example are consecutive."""
    return [extract(clip, DEFAULT_FEATURES) for ex in examples for clip in render_clips(ex, augment)]


@dataclass
class SeedData:
    train_pos: list[np.ndarray]
    train_neg: list[ds.TranscriptExample]
    train_neg_feats: dict[str, np.ndarray]
    train_sources: list[ds.TranscriptExample]
    eval_pos: list[np.ndarray]
    eval_neg: list[np.ndarray]
    eval_conf: list[np.ndarray]
    eval_conf_texts: set[str]


@dataclass
class CellResult:
    cell_id: str
    edit_distance: int | None
    confusable_count: int | None
    seed: int
    pos_vs_neg: ev.EvalReport
    pos_vs_conf: ev.EvalReport
    train_confusables: list[str] = field(default_factory=list)
    elapsed_s: float = field(default=0.0, compare=False)


def _augment(config: ExperimentConfig, seed: int) -> ds.AugmentSpec:
    return ds.AugmentSpec(config.variation_count, config.snr_range_db, config.gain_range_db, config.noise_source, seed=seed)


def prepare_seed(config: ExperimentConfig, seed: int) -> SeedData:
    augment = _augment(config, seed)
    train_sources = ds.make_sources(config.train_per_class, seed, config.placeholder, prefix="train")
    eval_sources = ds.make_sources(config.eval_per_class, seed + 100_003, config.placeholder, prefix="eval")
    train_voices = {ds.voice_seed_of(s) for s in train_sources}
    eval_sources = [s for s in eval_sources if ds.voice_seed_of(s) not in train_voices]

    eval_confs = grapheme.sample_unique(config.keyword, config.eval_distance, config.eval_confusables, seed + 7919)
    rng = random.Random(seed)
    eval_conf_examples = [ds.make_confusable(rng.choice(eval_sources), c, config.keyword, config.placeholder) for c in eval_confs]

    train_neg = [ds.make_negative(s, config.placeholder) for s in train_sources]
    neg_feats = render_features(train_neg, augment)
    v = config.variation_count
    return SeedData(
        train_pos=render_features([ds.make_positive(s, config.keyword, config.placeholder) for s in train_sources], augment),
        train_neg=train_neg,
        train_neg_feats={ex.id: neg_feats[i * v : (i + 1) * v] for i, ex in enumerate(train_neg)},
        train_sources=train_sources,
        eval_pos=render_features([ds.make_positive(s, config.keyword, config.placeholder) for s in eval_sources], augment),
        eval_neg=render_features([ds.make_negative(s, config.placeholder) for s in eval_sources], augment),
        eval_conf=render_features(eval_conf_examples, augment),
        eval_conf_texts={c.text for c in eval_confs},
    )


def build_training_set(config: ExperimentConfig, data: SeedData, seed: int, distance: int | None, count: int | None):
    """(features, target) pairs for one cell, plus the confusable texts used."""
    negatives = data.train_neg
    conf_texts: list[str] = []
    if distance is not None:
        confs = grapheme.sample_unique(config.keyword, distance, count, seed + 31 * distance + count, exclude=data.eval_conf_texts)
        conf_texts = [c.text for c in confs]
        if set(conf_texts) & data.eval_conf_texts:
            raise ExperimentError("training confusables overlap the held-out evaluation set")
        # one confusable example per source, cycling through the confusable list
        pool = [
            ds.make_confusable(src, confs[i % len(confs)], config.keyword, config.placeholder)
            for i, src in enumerate(data.train_sources)
        ]
        negatives = ds.mix_negatives(negatives, pool, ds.MixSpec(config.mix_ratio, seed))
    augment = _augment(config, seed)
    neg_feats: list[np.ndarray] = []
    fresh = [ex for ex in negatives if ex.id not in data.train_neg_feats]
    rendered = render_features(fresh, augment)
    v = config.variation_count
    fresh_feats = {ex.id: rendered[i * v : (i + 1) * v] for i, ex in enumerate(fresh)}
    for ex in negatives:
        neg_feats.extend(data.train_neg_feats.get(ex.id) or fresh_feats[ex.id])
    train_set = [(f, 1) for f in data.train_pos] + [(f, 0) for f in neg_feats]
    return train_set, conf_texts


def run_cell(config: ExperimentConfig, data: SeedData, seed: int, cell: tuple[str, int | None, int | None]) -> tuple[CellResult, list]:
    cell_id, distance, count = cell
    t0 = time.time()
    train_set, conf_texts = build_training_set(config, data, seed, distance, count)
    model = init(NAMED_CONFIGS[config.model](), seed, dtype=np.float32 if config.float32 else np.float64)
    model.normalizer_from([f for f, _ in train_set])
    tc = TrainConfig(config.steps, config.batch_size, config.learning_rate, config.momentum, seed, config.checkpoint_count)
    checkpoints = train(model, train_set, tc)
    pos_neg, pos_conf, scored = [], [], []
    for ck in checkpoints:
        sp = score_sequences(ck.model, data.eval_pos)
        sn = score_sequences(ck.model, data.eval_neg)
        sc = score_sequences(ck.model, data.eval_conf)
        pos_neg.append(ev.auc_from_scores(sp, sn))
        pos_conf.append(ev.auc_from_scores(sp, sc))
        scored.append((sp, sn, sc))
    result = CellResult(
        cell_id, distance, count, seed, ev.aggregate_checkpoints(pos_neg), ev.aggregate_checkpoints(pos_conf), conf_texts,
        elapsed_s=time.time() - t0,
    )
    logger.info(
        "seed %d %s: pos/neg %.4f pos/conf %.4f (%.0fs)",
        seed, cell_id, result.pos_vs_neg.mean_auc, result.pos_vs_conf.mean_auc, result.elapsed_s,
    )
    return result, scored


def _write_cell(out: Path, result: CellResult, scored, baseline: CellResult | None) -> None:
    cell_dir = out / result.cell_id / f"seed{result.seed}"
    cell_dir.mkdir(parents=True, exist_ok=True)
    ev.write_report_json(cell_dir / "report_pos_vs_neg.json", result.pos_vs_neg, baseline.pos_vs_neg if baseline else None)
    ev.write_report_json(cell_dir / "report_pos_vs_conf.json", result.pos_vs_conf, baseline.pos_vs_conf if baseline else None)
    sp, sn, _ = scored[result.pos_vs_neg.median_checkpoint_index]
    ev.write_roc_csv(cell_dir / "roc_pos_vs_neg.csv", ev.roc(sp, sn))
    sp, _, sc = scored[result.pos_vs_conf.median_checkpoint_index]
    ev.write_roc_csv(cell_dir / "roc_pos_vs_conf.csv", ev.roc(sp, sc))
    (cell_dir / "train_confusables.txt").write_text("".join(t + "\n" for t in result.train_confusables), encoding="utf-8")


def summarize(results: Sequence[CellResult]) -> list[dict]:
    """Seed-averaged AUCs per cell; the (1 - AUC) ratio is taken on the averages."""
    by_cell: dict[str, list[CellResult]] = {}
    for r in results:
        by_cell.setdefault(r.cell_id, []).append(r)
    rows = []
    base = by_cell.get("baseline")
    base_conf = float(np.mean([r.pos_vs_conf.mean_auc for r in base])) if base else None
    for cell_id, rs in by_cell.items():
        conf = float(np.mean([r.pos_vs_conf.mean_auc for r in rs]))
        rows.append({
            "cell_id": cell_id,
            "edit_distance": "" if rs[0].edit_distance is None else rs[0].edit_distance,
            "confusable_count": "" if rs[0].confusable_count is None else rs[0].confusable_count,
            "auc_eval_pos_vs_neg": float(np.mean([r.pos_vs_neg.mean_auc for r in rs])),
            "auc_eval_pos_vs_conf": conf,
            "one_minus_auc_ratio_vs_baseline": "" if base_conf is None else ev.one_minus_auc_ratio(conf, base_conf),
        })
    return rows


def write_summary(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def run_experiment(config: ExperimentConfig, out_dir=None) -> tuple[list[CellResult], list[dict], dict[str, str]]:
    """Run every cell for every seed; returns results, summary rows, and per-cell failures."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    results: list[CellResult] = []
    failures: dict[str, str] = {}
    for seed in config.seeds:
        data = prepare_seed(config, seed)
        baseline = None
        for cell in config.cells():
            try:
                result, scored = run_cell(config, data, seed, cell)
            except Exception as exc:  # recorded per cell; the run continues
                logger.exception("cell %s seed %d failed", cell[0], seed)
                failures[f"{cell[0]}/seed{seed}"] = f"{type(exc).__name__}: {exc}"
                continue
            if cell[0] == "baseline":
                baseline = result
            results.append(result)
            if out is not None:
                _write_cell(out, result, scored, baseline if cell[0] != "baseline" else None)
    rows = summarize(results)
    if out is not None:
        write_summary(out / "summary.csv", rows)
        if failures:
            (out / "failures.json").write_text(json.dumps(failures, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return results, rows, failures
