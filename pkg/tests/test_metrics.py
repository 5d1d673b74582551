"""Metric tests against hand-computed and brute-force oracles."""
import numpy as np
import pytest

from scmm import metrics
from scmm.errors import ContractError, DomainError


def batch_from_labels(predicted, truth, k=None):
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    k = k or int(max(predicted.max(), truth.max())) + 1
    probs = np.full((len(truth), k), 0.1 / (k - 1))
    probs[np.arange(len(truth)), predicted] = 0.9
    return metrics.PredictionBatch(probabilities=probs, true_labels=truth)


def test_all_correct_gives_ones():
    batch = batch_from_labels([0, 1, 2, 0], [0, 1, 2, 0])
    out = metrics.classification_metrics(batch)
    assert out == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}


def test_binary_complement_gives_zero_accuracy():
    batch = batch_from_labels([1, 0, 1, 0], [0, 1, 0, 1])
    assert metrics.classification_metrics(batch)["accuracy"] == 0.0


def test_three_class_confusion_matrix_hand_oracle():
    # confusion (rows = truth, cols = predicted):
    #   class0: [3, 1, 0]   class1: [1, 2, 1]   class2: [0, 1, 3]
    truth = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]
    predicted = [0, 0, 0, 1, 0, 1, 1, 2, 1, 2, 2, 2]
    batch = batch_from_labels(predicted, truth)
    out = metrics.classification_metrics(batch)
    # per class: precision = (3/4, 2/4, 3/4), recall = (3/4, 2/4, 3/4)
    assert abs(out["accuracy"] - 8.0 / 12.0) < 1e-12
    assert abs(out["precision"] - (3 / 4 + 2 / 4 + 3 / 4) / 3) < 1e-12
    assert abs(out["recall"] - (3 / 4 + 2 / 4 + 3 / 4) / 3) < 1e-12
    f1_by_class = [2 * 0.75 * 0.75 / 1.5, 2 * 0.5 * 0.5 / 1.0, 2 * 0.75 * 0.75 / 1.5]
    assert abs(out["f1"] - np.mean(f1_by_class)) < 1e-12


def test_absent_class_contributes_zero_with_warning(caplog):
    probs = np.array([[0.8, 0.1, 0.1], [0.7, 0.2, 0.1]])
    batch = metrics.PredictionBatch(probabilities=probs, true_labels=np.array([0, 0]))
    with caplog.at_level("WARNING"):
        out = metrics.classification_metrics(batch)
    assert out["accuracy"] == 1.0
    assert out["precision"] == pytest.approx(1.0 / 3.0)
    assert any("absent" in rec.message for rec in caplog.records)


def test_empty_batch_rejected():
    with pytest.raises(ContractError):
        metrics.classification_metrics(
            metrics.PredictionBatch(
                probabilities=np.zeros((0, 3)), true_labels=np.zeros(0, dtype=int)
            )
        )


def test_probability_rows_must_sum_to_one():
    with pytest.raises(ContractError, match="sum to 1"):
        metrics.PredictionBatch(
            probabilities=np.array([[0.5, 0.2]]), true_labels=np.array([0])
        )


# ---------------------------------------------------------------------------
# AUROC / AUPRC
# ---------------------------------------------------------------------------

def binary_batch(scores, truth):
    scores = np.asarray(scores, dtype=np.float64)
    probs = np.stack([1.0 - scores, scores], axis=1)
    return metrics.PredictionBatch(probabilities=probs, true_labels=np.asarray(truth))


def test_perfect_ranking():
    batch = binary_batch([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert metrics.auroc(batch) == pytest.approx(1.0)
    assert metrics.auprc(batch) == pytest.approx(1.0)


def test_auroc_matches_exhaustive_pair_counting():
    scores = np.array([0.1, 0.4, 0.35, 0.8, 0.65, 0.4])
    truth = np.array([0, 0, 1, 1, 1, 0])
    batch = binary_batch(scores, truth)
    wins = 0.0
    pairs = 0
    for i in np.where(truth == 1)[0]:
        for j in np.where(truth == 0)[0]:
            pairs += 1
            if scores[i] > scores[j]:
                wins += 1.0
            elif scores[i] == scores[j]:
                wins += 0.5
    # macro over both one-vs-rest classes: class 1 uses scores, class 0 uses 1-scores
    expected_class1 = wins / pairs
    assert metrics.auroc(batch) == pytest.approx(expected_class1, abs=1e-12)


def test_auroc_null_distribution():
    rng = np.random.default_rng(0)
    n = 20_000
    truth = rng.integers(0, 2, size=n)
    scores = rng.random(n)  # independent of labels
    assert abs(metrics.auroc(binary_batch(scores, truth)) - 0.5) < 0.03


def test_auroc_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    scores = rng.random(200)
    truth = rng.integers(0, 2, size=200)
    a = metrics.auroc(binary_batch(scores, truth))
    # strictly monotone transform of the scores, then renormalized rows
    warped = 1.0 / (1.0 + np.exp(-(scores * 7 - 2)))
    b = metrics.auroc(binary_batch(warped, truth))
    assert a == pytest.approx(b, abs=1e-12)


def test_auprc_step_integration_hand_oracle():
    scores = np.array([0.9, 0.8, 0.7, 0.6])
    truth = np.array([1, 0, 1, 0])
    # descending: thresholds at each point: P = 1, 1/2, 2/3, 2/4; R steps at 1/2 and 1
    expected = 0.5 * 1.0 + 0.5 * (2.0 / 3.0)
    assert metrics.auprc(binary_batch(scores, truth)) == pytest.approx(expected, abs=1e-12)


def test_auprc_with_tied_scores():
    scores = np.array([0.5, 0.5, 0.5, 0.1])
    truth = np.array([1, 1, 0, 0])
    # class 1: one tie group at 0.5 gives P = 2/3 at R = 1, AP = 2/3
    # class 0 (scores flipped): 0.9 first (P=1, R=1/2), then the tie group
    # reaches R=1 at P=1/2, AP = 1/2 + 1/4 = 3/4; macro = (2/3 + 3/4) / 2
    expected = (2.0 / 3.0 + 3.0 / 4.0) / 2.0
    assert metrics.auprc(binary_batch(scores, truth)) == pytest.approx(expected, abs=1e-12)


def test_single_class_truth_rejected():
    with pytest.raises(DomainError):
        metrics.auroc(binary_batch([0.2, 0.4], [1, 1]))
    with pytest.raises(DomainError):
        metrics.auprc(binary_batch([0.2, 0.4], [0, 0]))


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(2)
    probs = rng.dirichlet(np.ones(3), size=50)
    truth = rng.integers(0, 3, size=50)
    batch = metrics.PredictionBatch(probabilities=probs, true_labels=truth)
    perm = rng.permutation(50)
    shuffled = metrics.PredictionBatch(probabilities=probs[perm], true_labels=truth[perm])
    assert metrics.classification_metrics(batch) == metrics.classification_metrics(shuffled)
    assert metrics.auroc(batch) == pytest.approx(metrics.auroc(shuffled), abs=1e-12)
    assert metrics.auprc(batch) == pytest.approx(metrics.auprc(shuffled), abs=1e-12)


def test_all_metrics_in_unit_interval():
    rng = np.random.default_rng(3)
    probs = rng.dirichlet(np.ones(4), size=120)
    truth = rng.integers(0, 4, size=120)
    batch = metrics.PredictionBatch(probabilities=probs, true_labels=truth)
    values = metrics.classification_metrics(batch)
    values["auroc"] = metrics.auroc(batch)
    values["auprc"] = metrics.auprc(batch)
    assert all(0.0 <= v <= 1.0 for v in values.values())


# ---------------------------------------------------------------------------
# aggregation over subjects
# ---------------------------------------------------------------------------

def test_aggregate_single_subject_zero_std():
    out = metrics.aggregate_subjects([{"accuracy": 0.75}])
    assert out["accuracy"] == {"mean": 75.0, "std": 0.0}


def test_aggregate_two_point_formula():
    out = metrics.aggregate_subjects([{"accuracy": 0.80}, {"accuracy": 0.90}])
    assert out["accuracy"] == {"mean": 85.0, "std": 5.0}


def test_aggregate_matches_direct_recomputation():
    rng = np.random.default_rng(4)
    rows = [{"accuracy": float(a), "f1": float(f)}
            for a, f in rng.uniform(0.4, 1.0, size=(15, 2))]
    out = metrics.aggregate_subjects(rows)
    acc = np.array([r["accuracy"] for r in rows])
    assert out["accuracy"]["mean"] == pytest.approx(round(acc.mean() * 100, 2))
    assert out["accuracy"]["std"] == pytest.approx(round(acc.std() * 100, 2))
