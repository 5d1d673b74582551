"""Classification metrics computed from scratch: accuracy, macro precision /
recall / F1, one-vs-rest AUROC (rank statistic, tie-aware) and AUPRC
(step integration of the precision-recall curve), plus subject-level
mean/std aggregation in percent.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError

logger = logging.getLogger(__name__)


@dataclass
class PredictionBatch:
    probabilities: np.ndarray  # [N, K], rows sum to 1
    true_labels: np.ndarray  # [N] ints < K
    predicted: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        if self.probabilities.ndim != 2:
            raise ContractError(f"probabilities must be [N, K], got {self.probabilities.shape}")
        if len(self.true_labels) != len(self.probabilities):
            raise ContractError("labels and probabilities disagree on N")
        sums = self.probabilities.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ContractError("probability rows must sum to 1 within 1e-6")
        if np.any(self.true_labels < 0) or np.any(self.true_labels >= self.class_count):
            raise ContractError("labels out of range")
        if self.predicted is None:
            self.predicted = self.probabilities.argmax(axis=1)

    @property
    def class_count(self):
        return self.probabilities.shape[1]


def classification_metrics(batch: PredictionBatch) -> dict:
    """Accuracy plus macro-averaged precision, recall, and F1.

    A class absent from both the truth and the predictions contributes 0
    to each macro average, with a logged warning.
    """
    n = len(batch.true_labels)
    if n < 1:
        raise ContractError("empty prediction batch")
    k = batch.class_count
    accuracy = float((batch.predicted == batch.true_labels).mean())
    precisions, recalls, f1s = [], [], []
    for cls in range(k):
        tp = int(np.sum((batch.predicted == cls) & (batch.true_labels == cls)))
        fp = int(np.sum((batch.predicted == cls) & (batch.true_labels != cls)))
        fn = int(np.sum((batch.predicted != cls) & (batch.true_labels == cls)))
        if tp + fp + fn == 0:
            logger.warning("class %d absent from truth and predictions; counted as 0", cls)
            precisions.append(0.0)
            recalls.append(0.0)
            f1s.append(0.0)
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    return {
        "accuracy": accuracy,
        "precision": float(np.mean(precisions)),
        "recall": float(np.mean(recalls)),
        "f1": float(np.mean(f1s)),
    }


def _binary_auroc(scores, positives):
    """Mann-Whitney rank statistic; ties share the average rank."""
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[positives].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _binary_auprc(scores, positives):
    """Average precision via step integration over descending score thresholds."""
    order = np.argsort(-scores, kind="mergesort")
    sorted_pos = positives[order].astype(np.float64)
    sorted_scores = scores[order]
    total_pos = sorted_pos.sum()
    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(1.0 - sorted_pos)
    # ties: only the last index of each equal-score group is a valid threshold
    keep = np.append(sorted_scores[1:] != sorted_scores[:-1], True)
    tp, fp = tp[keep], fp[keep]
    precision = tp / (tp + fp)
    recall = tp / total_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def _one_vs_rest(batch: PredictionBatch, binary_metric) -> float:
    truth = batch.true_labels
    present = np.unique(truth)
    if len(present) < 2:
        raise DomainError("metric undefined: truth contains a single class")
    values = []
    for cls in present:
        positives = truth == cls
        values.append(binary_metric(batch.probabilities[:, cls], positives))
    return float(np.mean(values))


def auroc(batch: PredictionBatch) -> float:
    """Macro one-vs-rest area under the ROC curve."""
    return _one_vs_rest(batch, _binary_auroc)


def auprc(batch: PredictionBatch) -> float:
    """Macro one-vs-rest area under the precision-recall curve."""
    return _one_vs_rest(batch, _binary_auprc)


def aggregate_subjects(per_subject: list[dict]) -> dict:
    """Mean and population std per metric, in percent rounded to 2 decimals."""
    if not per_subject:
        raise ContractError("no subjects to aggregate")
    keys = sorted(per_subject[0])
    out = {}
    for key in keys:
        values = np.asarray([row[key] for row in per_subject], dtype=np.float64)
        out[key] = {
            "mean": round(float(values.mean()) * 100.0, 2),
            "std": round(float(values.std()) * 100.0, 2),
        }
    return out
