"""Binary and micro-averaged multi-label metrics, plus the per-fold report record."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
THRESHOLD = 0.5
RP_PRECISION = 0.8


def _prepare(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int8)
    if scores.size == 0:
        raise ValueError("empty prediction set")
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in size")
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite scores")
    return scores, labels


def threshold_metrics(scores, labels, threshold=THRESHOLD):
    """Precision, recall and F1 with ``score >= threshold`` as a positive call.

    Zero predicted positives gives precision 0; zero actual positives gives
    recall 0.
    """
    scores, labels = _prepare(scores, labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def roc_auc(scores, labels):
    """Mann-Whitney U / (n_pos * n_neg) with average ranks for ties."""
    scores, labels = _prepare(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC undefined with a single class")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    n = scores.size
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _pr_curve(scores, labels):
    """Cumulative (tp, fp) at each distinct threshold, highest score first."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    return tp[last], fp[last]


def au_pr(scores, labels):
    """Step-interpolated area under the precision-recall curve.

    sum over thresholds of (R_n - R_{n-1}) * P_n.
    """
    scores, labels = _prepare(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("AU-PR undefined without positive labels")
    tp, fp = _pr_curve(scores, labels)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def rp80(scores, labels, min_precision=RP_PRECISION):
    """Largest recall over all thresholds whose precision is at least ``min_precision``; 0 if none."""
    scores, labels = _prepare(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("RP80 undefined without positive labels")
    tp, fp = _pr_curve(scores, labels)
    ok = tp / (tp + fp) >= min_precision
    if not ok.any():
        return 0.0
    return float((tp[ok] / n_pos).max())


def top_k_indices(scores, k):
    """Indices of the ``k`` highest scores; equal scores rank by ascending index."""
    scores = np.asarray(scores)
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def recall_at_k(scores, y_true, k, return_excluded=False):
    """Mean over samples of |top-k ∩ true| / |true|.

    Rows with no true codes are skipped (their count is logged, and
    returned when ``return_excluded`` is set).
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    y_true = np.atleast_2d(np.asarray(y_true)).astype(bool)
    if scores.shape != y_true.shape:
        raise ValueError("scores and labels differ in shape")
    n_true = y_true.sum(axis=1)
    keep = n_true > 0
    excluded = int((~keep).sum())
    if excluded:
        log.debug("recall@%d: %d samples without true codes excluded", k, excluded)
    if not keep.any():
        raise ValueError("no sample has a true code")
    s, y, n = scores[keep], y_true[keep], n_true[keep]
    order = np.argsort(-s, axis=1, kind="stable")[:, :k]
    hits = np.take_along_axis(y, order, axis=1).sum(axis=1)
    value = float(np.mean(hits / n))
    return (value, excluded) if return_excluded else value


@dataclass
class MetricsReport:
    """One evaluation record; ``None`` marks metrics irrelevant to the task."""

    task: str
    fold: Optional[int]
    fingerprint: str
    n_samples: int
    auc: Optional[float] = None
    au_pr: Optional[float] = None
    f1: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    rp80: Optional[float] = None
    recall_at_10: Optional[float] = None
    recall_at_20: Optional[float] = None
    recall_at_30: Optional[float] = None
    loss: Optional[float] = None
    kind: str = "fold"
    extra: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    METRICS = ("auc", "au_pr", "f1", "precision", "recall", "rp80",
               "recall_at_10", "recall_at_20", "recall_at_30")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricsReport":
        data = json.loads(line)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {data.get('schema_version')}")
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def evaluate_binary(scores, labels, task="readmission", fold=None, fingerprint="", loss=None):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    p, r, f1 = threshold_metrics(scores, labels)
    report = MetricsReport(task, fold, fingerprint, int(scores.size), precision=p, recall=r, f1=f1,
                           loss=loss)
    if 0 < labels.sum() < labels.size:
        report.auc = roc_auc(scores, labels)
    if labels.sum() > 0:
        report.au_pr = au_pr(scores, labels)
        report.rp80 = rp80(scores, labels)
    return report


def evaluate_multilabel(scores, labels, task="diagnosis", fold=None, fingerprint="", loss=None,
                        ks=(10, 20, 30)):
    """Micro-averaged AU-PR/F1/RP80 plus per-sample Recall@k."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels))
    flat_s, flat_y = scores.ravel(), labels.ravel()
    p, r, f1 = threshold_metrics(flat_s, flat_y)
    report = MetricsReport(task, fold, fingerprint, int(scores.shape[0]), precision=p, recall=r,
                           f1=f1, loss=loss)
    if flat_y.sum() > 0:
        report.au_pr = au_pr(flat_s, flat_y)
        report.rp80 = rp80(flat_s, flat_y)
        excluded = 0
        for k in ks:
            if k <= scores.shape[1]:
                value, excluded = recall_at_k(scores, labels, k, return_excluded=True)
                setattr(report, f"recall_at_{k}", value)
        report.extra["recall_excluded_samples"] = excluded
    report.extra["au_pr_interpolation"] = "step"
    return report


def write_reports(path, reports: Iterable[MetricsReport], mode="w") -> None:
    with open(path, mode, encoding="utf-8") as fh:
        for rep in reports:
            fh.write(rep.to_json() + "\n")


def read_reports(path) -> list[MetricsReport]:
    with open(path, encoding="utf-8") as fh:
        return [MetricsReport.from_json(line) for line in fh if line.strip()]


def summarize(reports: Sequence[MetricsReport]) -> dict:
    """Cross-fold mean and (population) standard deviation per metric."""
    out = {}
    for name in MetricsReport.METRICS:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if values:
            arr = np.asarray(values, dtype=np.float64)
            out[name] = {"mean": float(arr.mean()), "std": float(arr.std()), "n": len(values)}
    return out
