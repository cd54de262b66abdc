"""Embedding-space evaluation metrics."""

import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from embalign.errors import DomainError, ShapeError
from embalign.metrics import (
    clip_correlation,
    clip_distance,
    evaluate,
    format_mean_se,
    topk_accuracy,
)


class TestClipDistance:
    def test_perfect_predictions_score_exactly_one(self):
        pred = np.random.default_rng(0).standard_normal((20, 8))
        assert clip_distance(pred, pred.copy()) == 1.0

    def test_rowwise_orthogonal_scores_zero(self):
        pred = np.array([[1.0, 0.0], [0.0, 2.0]])
        truth = np.array([[0.0, 3.0], [1.0, 0.0]])
        assert clip_distance(pred, truth) == 0.0

    def test_hand_arithmetic(self):
        pred = np.array([[1.0, 0.0], [0.0, 1.0]])
        truth = np.array([[1.0, 1.0], [1.0, 0.0]])
        expected = (1 / np.sqrt(2) + 0.0) / 2
        assert clip_distance(pred, truth) == pytest.approx(expected, abs=1e-15)

    def test_zero_row_named_in_error(self):
        pred = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(DomainError, match="row 1"):
            clip_distance(pred, np.ones((2, 2)))

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        pred = rng.standard_normal((10, 5))
        truth = rng.standard_normal((10, 5))
        scaled = pred.copy()
        scaled[3] *= 7.5
        assert clip_distance(scaled, truth) == pytest.approx(
            clip_distance(pred, truth), abs=1e-12
        )

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            clip_distance(np.ones((2, 3)), np.ones((3, 2)))


class TestClipCorrelation:
    def test_perfect_predictions_score_exactly_one(self):
        pred = np.random.default_rng(2).standard_normal((12, 6))
        assert clip_correlation(pred, pred.copy()) == 1.0

    def test_exact_tie_counts_as_failure(self):
        rng = np.random.default_rng(3)
        row = rng.standard_normal(5)
        truth = np.vstack([row, row])  # duplicated truth rows tie exactly
        pred = rng.standard_normal((2, 5))
        assert clip_correlation(pred, truth) == 0.0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(4)
        pred = rng.standard_normal((3, 7))
        truth = rng.standard_normal((3, 7))
        wins = 0
        for i in range(3):
            for j in range(3):
                if j == i:
                    continue
                rho_true = np.corrcoef(pred[i], truth[i])[0, 1]
                rho_other = np.corrcoef(pred[i], truth[j])[0, 1]
                wins += 1 if rho_true > rho_other else 0
        assert clip_correlation(pred, truth) == wins / (3 * 2)

    def test_constant_row_rejected(self):
        pred = np.vstack([np.ones(4), np.arange(4.0)])
        with pytest.raises(DomainError, match="row 0"):
            clip_correlation(pred, np.random.default_rng(5).standard_normal((2, 4)))

    def test_needs_two_rows_and_columns(self):
        with pytest.raises(DomainError):
            clip_correlation(np.ones((1, 4)), np.ones((1, 4)))


class TestTopkAccuracy:
    def test_k_equals_class_count(self):
        rng = np.random.default_rng(6)
        pred = rng.standard_normal((10, 4))
        centroids = rng.standard_normal((3, 4))
        labels = rng.integers(0, 3, 10)
        assert topk_accuracy(pred, labels, centroids, 3) == 1.0

    def test_exact_centroids_orthogonal(self):
        centroids = np.eye(4)
        labels = np.array([0, 1, 2, 3, 2])
        pred = centroids[labels]
        assert topk_accuracy(pred, labels, centroids, 1) == 1.0

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(7)
        pred = rng.standard_normal((4, 5))
        centroids = rng.standard_normal((3, 5))
        labels = np.array([2, 0, 1, 2])
        for k in (1, 2, 3):
            hits = 0
            for i in range(4):
                sims = []
                for c in range(3):
                    cs = pred[i] @ centroids[c] / (
                        np.linalg.norm(pred[i]) * np.linalg.norm(centroids[c])
                    )
                    sims.append((-cs, c))
                ranked = [c for _, c in sorted(sims)]
                hits += 1 if labels[i] in ranked[:k] else 0
            assert topk_accuracy(pred, labels, centroids, k) == hits / 4

    def test_tie_broken_by_lower_class_index(self):
        centroids = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])  # classes 0,1 tie always
        pred = np.array([[2.0, 0.0]])
        assert topk_accuracy(pred, np.array([0]), centroids, 1) == 1.0
        assert topk_accuracy(pred, np.array([1]), centroids, 1) == 0.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(8)
        pred = rng.standard_normal((30, 6))
        centroids = rng.standard_normal((5, 6))
        labels = rng.integers(0, 5, 30)
        accs = [topk_accuracy(pred, labels, centroids, k) for k in range(1, 6)]
        assert all(a <= b for a, b in zip(accs, accs[1:]))

    def test_bad_labels(self):
        with pytest.raises(DomainError):
            topk_accuracy(np.ones((2, 3)), np.array([0, 5]), np.ones((2, 3)), 1)


class TestEvaluate:
    def test_perfect_report(self):
        rng = np.random.default_rng(9)
        truth = rng.standard_normal((15, 6))
        centroids = rng.standard_normal((4, 6))
        # true labels are the nearest-centroid labels of the truth rows,
        # so a perfect prediction recovers them exactly
        sims = (truth / np.linalg.norm(truth, axis=1, keepdims=True)) @ (
            centroids / np.linalg.norm(centroids, axis=1, keepdims=True)
        ).T
        labels = np.argmax(sims, axis=1)
        report = evaluate(truth.copy(), truth, labels, centroids)
        assert report.clip_distance == 1.0
        assert report.clip_correlation == 1.0
        assert report.topk_accuracy[1] == 1.0
        assert report.mse == 0.0
        assert report.r2 == 1.0
        assert report.bootstrap_se is None

    def test_bootstrap_se_and_display_format(self):
        rng = np.random.default_rng(10)
        truth = rng.standard_normal((40, 5))
        pred = truth + 0.3 * rng.standard_normal((40, 5))
        report = evaluate(pred, truth, bootstrap_reps=50, seed=3)
        assert set(report.bootstrap_se) >= {"clip_distance", "clip_correlation", "mse", "r2"}
        shown = report.to_dict()["display"]["clip_distance"]
        assert re.fullmatch(r"-?\d+\.\d{3}±\d+\.\d{3}", shown)

    def test_bootstrap_deterministic(self):
        rng = np.random.default_rng(11)
        truth = rng.standard_normal((30, 5))
        pred = truth + 0.5 * rng.standard_normal((30, 5))
        r1 = evaluate(pred, truth, bootstrap_reps=20, seed=5)
        r2 = evaluate(pred, truth, bootstrap_reps=20, seed=5)
        assert r1.to_dict() == r2.to_dict()

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(12)
        truth = rng.standard_normal((25, 4))
        pred = truth + rng.standard_normal((25, 4))
        centroids = rng.standard_normal((3, 4))
        labels = rng.integers(0, 3, 25)
        perm = rng.permutation(25)
        a = evaluate(pred, truth, labels, centroids)
        b = evaluate(pred[perm], truth[perm], labels[perm], centroids)
        assert a.clip_distance == pytest.approx(b.clip_distance, abs=1e-12)
        assert a.clip_correlation == b.clip_correlation
        assert a.topk_accuracy == b.topk_accuracy
        assert a.mse == pytest.approx(b.mse, abs=1e-12)

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_ranges_hold(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 12))
        m = int(rng.integers(2, 8))
        truth = rng.standard_normal((n, m))
        pred = rng.standard_normal((n, m))
        centroids = rng.standard_normal((4, m))
        labels = rng.integers(0, 4, n)
        report = evaluate(pred, truth, labels, centroids)
        assert -1 <= report.clip_distance <= 1
        assert 0 <= report.clip_correlation <= 1
        for acc in report.topk_accuracy.values():
            assert 0 <= acc <= 1


class TestTopkDistractors:
    def test_all_distractors_matches_full_set(self):
        from embalign.metrics import topk_accuracy_distractors

        rng = np.random.default_rng(13)
        pred = rng.standard_normal((20, 5))
        centroids = rng.standard_normal((4, 5))
        labels = rng.integers(0, 4, 20)
        full = topk_accuracy(pred, labels, centroids, 2)
        sampled = topk_accuracy_distractors(pred, labels, centroids, 2, 3, seed=1)
        assert sampled == full  # 3 distractors from 4 classes = the full set

    def test_deterministic_given_seed(self):
        from embalign.metrics import topk_accuracy_distractors

        rng = np.random.default_rng(14)
        pred = rng.standard_normal((15, 6))
        centroids = rng.standard_normal((8, 6))
        labels = rng.integers(0, 8, 15)
        a = topk_accuracy_distractors(pred, labels, centroids, 1, 3, seed=5)
        b = topk_accuracy_distractors(pred, labels, centroids, 1, 3, seed=5)
        assert a == b

    def test_k_bounded_by_candidates(self):
        from embalign.metrics import topk_accuracy_distractors

        with pytest.raises(DomainError):
            topk_accuracy_distractors(np.ones((2, 3)), np.array([0, 1]), np.eye(3), 3, 1)


def test_format_mean_se():
    assert format_mean_se(0.486, 0.008) == "0.486±0.008"
