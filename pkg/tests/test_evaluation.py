import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn import metrics as skm

from hadua.errors import ContractError
from hadua.evaluation import (
    compute_metrics, confusion_matrix, equal_frequency_bins, mi_feature_importance, mutual_information, roc_auc,
    write_confusion_csv,
)
from oracles import random_simplex


def _onehot(labels, n_classes):
    return np.eye(n_classes)[labels]


def test_perfect_predictions():
    labels = np.array([0, 1, 2, 2, 1, 0])
    r = compute_metrics(_onehot(labels, 3), labels)
    assert (r.accuracy, r.macro_f1, r.auc, r.per_class_std) == (1.0, 1.0, 1.0, 0.0)


def test_hand_counted_binary_example():
    preds, labels = np.array([1, 0, 1, 1]), np.array([1, 0, 0, 1])
    r = compute_metrics(_onehot(preds, 2) * 0.8 + 0.1, labels)
    assert r.accuracy == 0.75
    assert r.confusion == [[1, 1], [0, 2]]


def test_uniform_scores_give_half_auc():
    labels = np.array([0, 1] * 10)
    assert compute_metrics(np.full((20, 2), 0.5), labels).auc == pytest.approx(0.5, abs=1e-12)


def test_ties_resolve_to_lowest_class():
    r = compute_metrics(np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([0, 1]))
    assert r.confusion == [[1, 0], [1, 0]]


def test_matches_sklearn_on_random_cases():
    rng = np.random.default_rng(10)
    for _ in range(50):
        C = int(rng.integers(2, 6))
        n = int(rng.integers(C * 3, 80))
        labels = np.r_[np.arange(C), rng.integers(0, C, size=n - C)]
        probs = random_simplex(rng, n, C)
        r = compute_metrics(probs, labels)
        pred = probs.argmax(axis=1)
        assert r.accuracy == pytest.approx(skm.accuracy_score(labels, pred), abs=1e-12)
        assert r.macro_f1 == pytest.approx(skm.f1_score(labels, pred, average="macro", labels=np.arange(C)),
                                           abs=1e-12)
        np.testing.assert_array_equal(r.confusion, skm.confusion_matrix(labels, pred, labels=np.arange(C)))
        sk_auc = np.mean([skm.roc_auc_score(labels == c, probs[:, c]) for c in range(C)])
        assert r.auc == pytest.approx(sk_auc, abs=1e-12)


def test_roc_auc_with_ties_matches_sklearn():
    rng = np.random.default_rng(12)
    for _ in range(50):
        scores = rng.integers(0, 5, size=40).astype(float)
        pos = rng.random(40) < 0.4
        pos[:2] = [True, False]
        assert roc_auc(scores, pos) == pytest.approx(skm.roc_auc_score(pos, scores), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    scores = rng.uniform(0.01, 3.0, size=30)
    pos = rng.random(30) < 0.5
    pos[:2] = [True, False]
    assert roc_auc(scores ** 3, pos) == pytest.approx(roc_auc(scores, pos), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_report_invariants(seed):
    rng = np.random.default_rng(seed)
    C = int(rng.integers(2, 5))
    labels = np.r_[np.arange(C), rng.integers(0, C, size=30)]
    r = compute_metrics(random_simplex(rng, labels.size, C), labels)
    cm = np.array(r.confusion)
    np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(labels, minlength=C))
    assert r.accuracy == pytest.approx(np.trace(cm) / cm.sum(), abs=1e-15)
    support = cm.sum(axis=1) / cm.sum()
    assert r.accuracy == pytest.approx(np.dot(support, r.per_class_acc), abs=1e-12)
    diagonal = np.count_nonzero(cm - np.diag(np.diag(cm))) == 0
    assert r.macro_f1 <= 1.0 and (r.macro_f1 == 1.0) == diagonal
    assert (r.per_class_std == 0.0) == (len(set(r.per_class_acc)) == 1)


def test_missing_class_is_skipped_for_auc():
    probs = np.array([[0.7, 0.2, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1]])
    r = compute_metrics(probs, np.array([0, 1, 0]))
    assert r.auc_skipped_classes == [2]
    assert r.auc == 1.0


def test_metrics_errors():
    with pytest.raises(ContractError):
        compute_metrics(np.zeros((0, 2)), np.zeros(0, int))
    with pytest.raises(ContractError):
        compute_metrics(np.full((2, 2), 0.5), np.array([0, 2]))
    with pytest.raises(ContractError):
        roc_auc([0.1, 0.2], [True, True])


def test_report_json_and_confusion_csv(tmp_path):
    labels = np.array([0, 1, 1])
    r = compute_metrics(_onehot(np.array([0, 1, 0]), 2), labels)
    payload = json.loads(r.to_json({"run_id": "x"}))
    assert payload["header"] == {"run_id": "x"}
    assert payload["metrics"]["confusion"] == [[1, 0], [1, 1]]
    write_confusion_csv(r, tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text() == "true\\pred,0,1\n0,1,0\n1,1,1\n"


def test_confusion_matrix_counts():
    np.testing.assert_array_equal(confusion_matrix([0, 0, 1], [0, 1, 1], 2), [[1, 0], [1, 1]])


# mutual information

def test_independent_feature_has_small_mi():
    rng = np.random.default_rng(0)
    probs = random_simplex(rng, 10_000, 3)
    feat = rng.permutation(rng.normal(size=10_000))[:, None]
    mi, degenerate = mi_feature_importance(feat, probs)
    assert mi[0] < 0.05 and not degenerate[0]


def test_feature_equal_to_prediction_recovers_entropy():
    rng = np.random.default_rng(1)
    probs = random_simplex(rng, 2_000, 3)
    pred = probs.argmax(axis=1)
    frac = np.bincount(pred, minlength=3) / pred.size
    entropy = -np.sum(frac[frac > 0] * np.log(frac[frac > 0]))
    mi, _ = mi_feature_importance(pred[:, None].astype(float), probs)
    assert mi[0] == pytest.approx(entropy, abs=0.02)


def test_mi_invariant_to_class_relabeling():
    rng = np.random.default_rng(2)
    probs = random_simplex(rng, 500, 3)
    feats = rng.normal(size=(500, 4)) + probs[:, :1]
    perm = np.array([2, 0, 1])
    a, _ = mi_feature_importance(feats, probs)
    b, _ = mi_feature_importance(feats, probs[:, perm])
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_mi_matches_sklearn():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b = rng.integers(0, 5, size=300), rng.integers(0, 3, size=300)
        b[:100] = a[:100] % 3
        assert mutual_information(a, b) == pytest.approx(skm.mutual_info_score(a, b), abs=1e-12)


def test_constant_feature_flagged():
    probs = random_simplex(np.random.default_rng(4), 100, 2)
    mi, degenerate = mi_feature_importance(np.c_[np.ones(100), np.arange(100.0)], probs)
    assert mi[0] == 0.0 and degenerate.tolist() == [True, False]


def test_mi_preconditions():
    probs = np.full((50, 2), 0.5)
    with pytest.raises(ContractError):
        mi_feature_importance(np.zeros((50, 1)), probs, bins=8)
    with pytest.raises(ContractError):
        mi_feature_importance(np.zeros((50, 1)), probs, bins=3)


def test_equal_frequency_bins_balance():
    x = np.random.default_rng(5).normal(size=800)
    assert np.bincount(equal_frequency_bins(x, 8)).tolist() == [100] * 8
