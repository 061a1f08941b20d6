import math

import numpy as np
import pytest

from plr.metrics import compute_metrics, confusion_counts, roc_auc


def mann_whitney_auc(labels, scores):
    """O(n^2) pair-counting oracle: wins + half-ties over all pos/neg pairs."""
    pos = [s for l, s in zip(labels, scores) if l == 1]
    neg = [s for l, s in zip(labels, scores) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestComputeMetrics:
    def test_hand_confusion(self):
        # TP=3, FP=1, FN=1, TN=5
        labels = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0, 0])
        scores = np.array([0.9, 0.8, 0.7, 0.2, 0.6, 0.1, 0.1, 0.2, 0.3, 0.4])
        m = compute_metrics(labels, scores, threshold=0.5)
        assert (m.tp, m.fp, m.fn, m.tn) == (3, 1, 1, 5)
        assert m.accuracy == pytest.approx(0.8, abs=1e-12)
        assert m.precision == pytest.approx(0.75, abs=1e-12)
        assert m.recall == pytest.approx(0.75, abs=1e-12)
        assert m.f1 == pytest.approx(0.75, abs=1e-12)

    def test_identities_hold(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(4, 60))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = rng.random(n)
            m = compute_metrics(labels, scores)
            total = m.tp + m.tn + m.fp + m.fn
            assert total == n
            assert abs(m.accuracy - (m.tp + m.tn) / total) < 1e-12
            if m.tp + m.fp:
                assert abs(m.precision - m.tp / (m.tp + m.fp)) < 1e-12
            if m.tp + m.fn:
                assert abs(m.recall - m.tp / (m.tp + m.fn)) < 1e-12
            if m.precision + m.recall:
                assert abs(m.f1 - 2 * m.precision * m.recall
                           / (m.precision + m.recall)) < 1e-12

    def test_all_correct(self):
        labels = np.array([1, 0, 1, 0])
        scores = np.array([0.9, 0.1, 0.8, 0.2])
        m = compute_metrics(labels, scores)
        assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)
        assert m.auc == 1.0

    def test_no_positive_predictions_flagged(self):
        labels = np.array([1, 0, 1, 0])
        scores = np.array([0.1, 0.2, 0.3, 0.4])
        m = compute_metrics(labels, scores)
        assert m.precision == 0.0 and m.recall == 0.0
        assert "precision" in m.degenerate

    def test_single_class_auc_nan(self):
        m = compute_metrics(np.array([1, 1]), np.array([0.6, 0.7]))
        assert math.isnan(m.auc)
        assert "auc" in m.degenerate

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            confusion_counts(np.array([]), np.array([]))


class TestRocAuc:
    def test_perfect_separation(self):
        labels = np.array([0, 0, 1, 1])
        scores = np.array([0.1, 0.2, 0.8, 0.9])
        assert roc_auc(labels, scores) == 1.0

    def test_all_tied_is_half(self):
        labels = np.array([0, 1, 0, 1, 1])
        scores = np.full(5, 0.5)
        assert roc_auc(labels, scores) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            roc_auc(np.array([1, 1]), np.array([0.3, 0.4]))

    def test_matches_pair_counting_oracle_exactly(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(4, 40))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # quantized scores force plenty of ties
            scores = np.round(rng.random(n) * rng.integers(2, 10), 1)
            assert roc_auc(labels, scores) == mann_whitney_auc(labels, scores)

    def test_reversed_scores_complement(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 2, 30)
        labels[0], labels[1] = 0, 1
        scores = rng.random(30)
        a = roc_auc(labels, scores)
        b = roc_auc(labels, -scores)
        assert a + b == pytest.approx(1.0, abs=1e-12)
