"""ROC curves, AUC, and checkpoint aggregation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreRecord:
    example_id: str
    label: str
    utterance_score: float

    def __post_init__(self):
        if not (math.isfinite(self.utterance_score) and 0.0 <= self.utterance_score <= 1.0):
            raise EvaluationError(f"{self.example_id}: score {self.utterance_score} outside [0, 1]")


@dataclass(frozen=True)
class RocCurve:
    """Operating points from strict to lenient thresholds.

    ``thresholds[i]`` accepts every score >= it; the leading (0, 0) point
    carries +inf. Counts are kept so the area can be summed exactly.
    """

    thresholds: np.ndarray
    true_accepts: np.ndarray
    false_accepts: np.ndarray
    num_pos: int
    num_neg: int

    @property
    def tar(self) -> np.ndarray:
        return self.true_accepts / self.num_pos

    @property
    def far(self) -> np.ndarray:
        return self.false_accepts / self.num_neg

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.far.tolist(), self.tar.tolist()))


def roc(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> RocCurve:
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise EvaluationError("roc needs nonempty positive and negative score lists")
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    ta = pos.size - np.searchsorted(pos_sorted, thresholds, side="left")
    fa = neg.size - np.searchsorted(neg_sorted, thresholds, side="left")
    return RocCurve(
        np.concatenate([[np.inf], thresholds]),
        np.concatenate([[0], ta]).astype(np.int64),
        np.concatenate([[0], fa]).astype(np.int64),
        int(pos.size),
        int(neg.size),
    )


def auc(curve: RocCurve) -> float:
    """Trapezoidal area, summed in integer counts and divided once."""
    dfa = np.diff(curve.false_accepts)
    twice_area = int(np.sum(dfa * (curve.true_accepts[1:] + curve.true_accepts[:-1])))
    return twice_area / (2 * curve.num_pos * curve.num_neg)


def auc_from_scores(pos_scores, neg_scores) -> float:
    return auc(roc(pos_scores, neg_scores))


def one_minus_auc_ratio(auc_value: float, baseline_auc: float) -> float:
    """(1 - AUC) relative to a baseline; 0.39 means the area above the curve shrank by 61%."""
    if baseline_auc >= 1.0:
        return math.inf if auc_value < 1.0 else 1.0
    return (1.0 - auc_value) / (1.0 - baseline_auc)


@dataclass
class EvalReport:
    aucs: list[float]
    mean_auc: float
    median_checkpoint_index: int
    extra: dict = field(default_factory=dict)

    @property
    def median_auc(self) -> float:
        return self.aucs[self.median_checkpoint_index]

    def to_dict(self, baseline: "EvalReport | None" = None) -> dict:
        d = {"aucs": self.aucs, "mean_auc": self.mean_auc, "median_checkpoint_index": self.median_checkpoint_index, **self.extra}
        if baseline is not None:
            ratio = one_minus_auc_ratio(self.mean_auc, baseline.mean_auc)
            d["one_minus_auc_ratio_vs_baseline"] = ratio
            d["relative_one_minus_auc_reduction"] = 1.0 - ratio
        return d


def aggregate_checkpoints(auc_list: Sequence[float]) -> EvalReport:
    """Mean over checkpoints; the median checkpoint uses the lower median for even counts."""
    if not len(auc_list):
        raise EvaluationError("no checkpoint AUCs to aggregate")
    values = [float(a) for a in auc_list]
    order = sorted(range(len(values)), key=lambda i: values[i])
    return EvalReport(values, math.fsum(values) / len(values), order[(len(values) - 1) // 2])


def write_scores_tsv(path, records: Sequence[ScoreRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(["example_id", "label", "score"])
        for r in records:
            w.writerow([r.example_id, r.label, repr(float(r.utterance_score))])


def read_scores_tsv(path) -> list[ScoreRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f, delimiter="\t"))
    return [ScoreRecord(r["example_id"], r["label"], float(r["score"])) for r in rows]


def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["threshold", "far", "tar"])
        for t, fa, ta in zip(curve.thresholds, curve.far, curve.tar):
            w.writerow([repr(float(t)), repr(float(fa)), repr(float(ta))])


def write_report_json(path, report: EvalReport, baseline: EvalReport | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(baseline), f, sort_keys=True, indent=2)
        f.write("\n")


def read_report_json(path) -> EvalReport:
    with open(path, encoding="utf-8") as f:
        d = json.load(f)
    return EvalReport(d["aucs"], d["mean_auc"], d["median_checkpoint_index"])
