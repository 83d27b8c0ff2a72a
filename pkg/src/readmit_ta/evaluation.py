"""Classification metrics, threshold selection, model comparison and fold aggregation."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, EmptyChunks, NoPositives, SingleClass

METRICS = ("auroc", "f1", "auprc", "precision", "recall")  # column order of the published tables
A, B, INCONCLUSIVE = "A", "B", "inconclusive"


def _arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError("scores and labels must be 1-D and equal length")
    if not len(s):
        raise DataError("empty score set")
    return s, y


def _rank_average(s: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing their mean rank."""
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    boundaries = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(s)]))
    ranks = np.empty(len(s))
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 * P(tie)."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both classes")
    r = _rank_average(s)
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _cuts(s: np.ndarray, y: np.ndarray):
    """Distinct thresholds (descending) with cumulative TP / predicted-positive counts at each."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last_of_group = np.flatnonzero(np.diff(s_sorted) != 0)
    idx = np.concatenate((last_of_group, [len(s) - 1]))
    tp = np.cumsum(y_sorted)[idx]
    predicted = idx + 1
    return s_sorted[idx], tp, predicted


def auprc(scores, labels) -> float:
    """Average precision; equal scores form a single cut."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("AUPRC needs at least one positive")
    _, tp, predicted = _cuts(s, y)
    d_recall = np.diff(np.concatenate(([0], tp))) / n_pos
    return float(np.sum(d_recall * tp / predicted))


def _prf(tp: float, predicted: float, n_pos: float) -> tuple[float, float, float]:
    precision = tp / predicted if predicted else 0.0
    recall = tp / n_pos if n_pos else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def prf_at(scores, labels, threshold: float) -> tuple[float, float, float]:
    """(precision, recall, f1) predicting positive iff score >= threshold."""
    s, y = _arrays(scores, labels)
    pred = s >= threshold
    return _prf(float(np.sum(pred & y)), float(pred.sum()), float(y.sum()))


def best_threshold(scores, labels) -> float:
    """Observed score maximising F1; ties go to the smallest such score."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise SingleClass("threshold selection needs both classes")
    thresholds, tp, predicted = _cuts(s, y)
    f1 = 2 * tp / (predicted + n_pos)  # algebraically equal to the harmonic mean
    best = f1.max()
    # exact comparison on the same float formula; thresholds descend, so take the last hit
    return float(thresholds[np.flatnonzero(f1 == best)[-1]])


@dataclass
class MetricsReport:
    auroc: float
    auprc: float
    f1: float
    precision: float
    recall: float
    threshold: float

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "MetricsReport":
        return cls(**{k: float(d[k]) for k in ("auroc", "auprc", "f1", "precision", "recall", "threshold")})


def evaluate(scores, labels, threshold: float) -> MetricsReport:
    p, r, f1 = prf_at(scores, labels, threshold)
    return MetricsReport(auroc(scores, labels), auprc(scores, labels), f1, p, r, float(threshold))


def evaluate_with_validation(test_scores, test_labels, val_scores, val_labels) -> MetricsReport:
    """Threshold fitted on the validation split, metrics on the test split."""
    return evaluate(test_scores, test_labels, best_threshold(val_scores, val_labels))


def conclusively_better(a, b) -> str:
    """``"A"``/``"B"`` when one side is strictly higher on at least three of the five metrics."""
    wins_a = wins_b = 0
    for m in METRICS:
        va, vb = _metric(a, m), _metric(b, m)
        if va > vb:
            wins_a += 1
        elif vb > va:
            wins_b += 1
    if wins_a >= 3:
        return A
    if wins_b >= 3:
        return B
    return INCONCLUSIVE


def _metric(report, name: str) -> float:
    if isinstance(report, FoldAggregate):
        return report.mean[name]
    return getattr(report, name)


@dataclass
class FoldAggregate:
    mean: dict[str, float]
    std: dict[str, float]
    k: int

    def to_json(self) -> dict:
        return {"k": self.k, "mean": self.mean, "std": self.std}

    @classmethod
    def from_json(cls, d: dict) -> "FoldAggregate":
        return cls(dict(d["mean"]), dict(d["std"]), int(d["k"]))

    def to_text(self, name: str = "model", digits: int = 4) -> str:
        header = ["Method", "AUROC", "F1", "AUPRC", "Precision", "Recall"]
        row = [name] + [f"{self.mean[m]:.{digits}f} ± {self.std[m]:.{digits}f}" for m in METRICS]
        widths = [max(len(h), len(c)) for h, c in zip(header, row)]
        fmt = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
        return "\n".join([fmt(header), "-+-".join("-" * w for w in widths), fmt(row)]) + "\n"


def aggregate_folds(reports: Sequence[MetricsReport]) -> FoldAggregate:
    """Per-metric mean and population standard deviation."""
    if not reports:
        raise DataError("no reports to aggregate")
    mean, std = {}, {}
    for m in METRICS:
        vals = np.array([getattr(r, m) for r in reports], dtype=float)
        mean[m] = float(vals.mean())
        std[m] = float(vals.std(ddof=0))
    return FoldAggregate(mean, std, len(reports))


def aggregate_note_scores(chunk_probs: Sequence[float]) -> float:
    """Combine per-chunk readmission probabilities of one note.

    ``(max + mean * n/2) / (1 + n/2)``: the max dominates for short notes, the
    mean for long ones.
    """
    p = np.asarray(chunk_probs, dtype=float)
    n = len(p)
    if n == 0:
        raise EmptyChunks("no chunk probabilities")
    if not np.all((p >= 0) & (p <= 1)):
        raise DataError("chunk probabilities must lie in [0, 1]")
    p_max, p_mean = float(p.max()), float(p.mean())
    return (p_max + p_mean * n / 2) / (1 + n / 2)


# --- file formats ----------------------------------------------------------------

def read_scores_csv(text: str) -> tuple[list[str], np.ndarray, np.ndarray]:
    ids, scores, labels = [], [], []
    reader = csv.DictReader(io.StringIO(text))
    missing = {"stay_id", "score", "label"} - set(reader.fieldnames or [])
    if missing:
        raise DataError(f"scores file missing column(s) {sorted(missing)}")
    for r in reader:
        ids.append(r["stay_id"])
        scores.append(float(r["score"]))
        labels.append(r["label"].strip().lower() in ("1", "true"))
    return ids, np.array(scores), np.array(labels, dtype=bool)


def scores_to_csv(ids: Iterable[str], scores: Iterable[float], labels: Iterable[bool]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stay_id", "score", "label"])
    for i, s, y in zip(ids, scores, labels):
        w.writerow([i, repr(float(s)), int(bool(y))])
    return buf.getvalue()


def load_report(path) -> MetricsReport | FoldAggregate:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if "mean" in d:
        return FoldAggregate.from_json(d)
    return MetricsReport.from_json(d)
