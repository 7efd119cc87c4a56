"""Metric suite, case-level bootstrap, and equivalence decision rules."""

import math

import numpy as np
import pytest

from morphoml.errors import DataError, ValidationError
from morphoml.evaluation import (
    METRIC_NAMES,
    PredictionSet,
    bootstrap_ci,
    confusion_matrix,
    evaluate,
    paired_test_and_tost,
    weighted_metric,
)


def _toy():
    return PredictionSet(
        case_ids=("c1", "c2", "c3", "c4"),
        y_true=np.array([0, 0, 0, 1]),
        y_pred=np.array([0, 0, 1, 1]),
        class_names=("A", "B"),
    )


def test_prediction_set_validation():
    with pytest.raises(DataError):
        PredictionSet(("c1",), np.array([0, 1]), np.array([0]), ("A", "B"))
    with pytest.raises(DataError):
        PredictionSet(("c1",), np.array([2]), np.array([0]), ("A", "B"))
    with pytest.raises(DataError):
        PredictionSet(
            ("c1",), np.array([0]), np.array([0]), ("A", "B"), probabilities=np.array([[0.5]])
        )
    with pytest.raises(DataError):
        PredictionSet(
            ("c1",),
            np.array([0]),
            np.array([0]),
            ("A", "B"),
            probabilities=np.array([[0.9, 0.3]]),
        )
    ok = PredictionSet(
        ("c1",), np.array([0]), np.array([0]), ("A", "B"), probabilities=np.array([[0.7, 0.3]])
    )
    assert ok.n_rows == 1


def test_confusion_matrix_oracle():
    cm = confusion_matrix(_toy())
    np.testing.assert_array_equal(cm, [[2, 1], [0, 1]])


def test_weighted_metrics_hand_oracle():
    toy = _toy()
    assert weighted_metric(toy, "accuracy") == pytest.approx(0.75)
    assert weighted_metric(toy, "f1") == pytest.approx((3 * 0.8 + 1 * (2 / 3)) / 4)
    assert weighted_metric(toy, "sensitivity") == pytest.approx((3 * (2 / 3) + 1 * 1.0) / 4)
    # specificity: class A true negatives 1/1, class B 2/3
    assert weighted_metric(toy, "specificity") == pytest.approx((3 * 1.0 + 1 * (2 / 3)) / 4)
    with pytest.raises(ValidationError):
        weighted_metric(toy, "rmse")


def test_auroc_rank_oracle_and_monotone_invariance():
    probs = np.array(
        [[0.9, 0.1], [0.6, 0.4], [0.35, 0.65], [0.2, 0.8], [0.55, 0.45]]
    )
    preds = PredictionSet(
        case_ids=tuple(f"c{i}" for i in range(5)),
        y_true=np.array([0, 0, 1, 1, 1]),
        y_pred=np.argmax(probs, axis=1),
        class_names=("A", "B"),
        probabilities=probs,
    )
    # class B: positives scores (.4 miss? no: true B rows are 2,3,4) ->
    # scores .65, .8, .45 vs negatives .1, .4; pairs won: all but (.45 > .4) -> 6/6
    # class A: positives rows 0,1 scores .9, .6 vs negatives .35, .2, .55 ->
    # wins: .9>all (3) + .6>.35,.2,.55 (3) = 6/6
    assert weighted_metric(preds, "auroc") == pytest.approx(1.0)
    flip = probs.copy()
    flip[0] = [0.45, 0.55]  # best A row now leans B
    preds2 = PredictionSet(
        preds.case_ids, preds.y_true, preds.y_pred, preds.class_names, probabilities=flip
    )
    # class A: wins .45>.35,.2 (2) + .6>.35,.2,.55 (3) = 5/6
    # class B: negatives now .55,.4; positives .65,.8,.45 -> wins 2+2+1=5/6... tie at none
    want = (2 * (5 / 6) + 3 * (5 / 6)) / 5
    assert weighted_metric(preds2, "auroc") == pytest.approx(want)
    # strictly monotone per-class transform preserves ranks, hence auroc
    cubed = probs**3
    cubed /= cubed.sum(axis=1, keepdims=True)
    preds3 = PredictionSet(
        preds.case_ids, preds.y_true, preds.y_pred, preds.class_names, probabilities=cubed
    )
    assert weighted_metric(preds3, "auroc") == pytest.approx(weighted_metric(preds, "auroc"))


def test_metric_permutation_invariance():
    rng = np.random.default_rng(3)
    n = 40
    preds = PredictionSet(
        case_ids=tuple(f"c{i}" for i in range(n)),
        y_true=rng.integers(0, 3, size=n),
        y_pred=rng.integers(0, 3, size=n),
        class_names=("A", "B", "C"),
    )
    perm = rng.permutation(n)
    shuffled = preds.subset(perm)
    for metric in ("accuracy", "f1", "sensitivity", "specificity"):
        assert weighted_metric(preds, metric) == pytest.approx(weighted_metric(shuffled, metric))


def test_absent_class_is_reported_not_scored():
    preds = PredictionSet(
        case_ids=("c1", "c2", "c3"),
        y_true=np.array([0, 0, 2]),
        y_pred=np.array([0, 2, 2]),
        class_names=("A", "B", "C"),
    )
    report = evaluate(preds, n_replicates=50, seed=0)
    assert report.per_class_f1["B"] is None
    assert report.absent_classes == ("B",)
    assert report.per_class_f1["A"] == pytest.approx(2 * 1 / (2 * 1 + 0 + 1))
    # weighted metrics count only present classes (weight 0 for B):
    # F1_A = 2/3 with support 2, F1_C = 2/3 with support 1
    assert weighted_metric(preds, "f1") == pytest.approx((2 * (2 / 3) + 1 * (2 / 3)) / 3)


def test_bootstrap_point_matches_plain_metric_and_is_seeded():
    rng = np.random.default_rng(8)
    n = 60
    preds = PredictionSet(
        case_ids=tuple(f"c{i}" for i in range(n)),
        y_true=rng.integers(0, 2, size=n),
        y_pred=rng.integers(0, 2, size=n),
        class_names=("A", "B"),
    )
    point, lo, hi = bootstrap_ci(preds, "accuracy", n_replicates=200, seed=5)
    assert point == pytest.approx(weighted_metric(preds, "accuracy"))
    assert lo <= point <= hi
    again = bootstrap_ci(preds, "accuracy", n_replicates=200, seed=5)
    assert (point, lo, hi) == again
    other = bootstrap_ci(preds, "accuracy", n_replicates=200, seed=6)
    assert other != again
    with pytest.raises(ValidationError):
        bootstrap_ci(preds, "accuracy", n_replicates=0, seed=1)


def test_bootstrap_degenerate_single_case():
    preds = PredictionSet(("only",), np.array([0]), np.array([0]), ("A", "B"))
    point, lo, hi = bootstrap_ci(preds, "accuracy", n_replicates=50, seed=1)
    assert (point, lo, hi) == (1.0, 1.0, 1.0)


def test_bootstrap_resamples_cases_not_rows():
    # two rows per case; case-level resampling keeps case rows together, so
    # a case with one right and one wrong row always contributes accuracy 0.5
    preds = PredictionSet(
        case_ids=("k1", "k1", "k2", "k2"),
        y_true=np.array([0, 0, 0, 0]),
        y_pred=np.array([0, 1, 0, 1]),
        class_names=("A", "B"),
    )
    point, lo, hi = bootstrap_ci(preds, "accuracy", n_replicates=100, seed=2)
    assert (point, lo, hi) == (0.5, 0.5, 0.5)


def test_evaluate_full_report():
    rng = np.random.default_rng(12)
    n = 50
    y = rng.integers(0, 2, size=n)
    probs = rng.dirichlet((2, 2), size=n)
    preds = PredictionSet(
        case_ids=tuple(f"c{i}" for i in range(n)),
        y_true=y,
        y_pred=np.argmax(probs, axis=1),
        class_names=("A", "B"),
        probabilities=probs,
    )
    report = evaluate(preds, n_replicates=100, seed=3)
    assert set(report.metrics) == set(METRIC_NAMES)
    for point, lo, hi in report.metrics.values():
        assert lo <= point <= hi
    no_probs = PredictionSet(preds.case_ids, y, preds.y_pred, ("A", "B"))
    report2 = evaluate(no_probs, n_replicates=100, seed=3)
    assert "auroc" not in report2.metrics


def test_tost_identical_sets_are_equivalent():
    rng = np.random.default_rng(4)
    y = rng.integers(0, 2, size=100)
    y_pred = y.copy()
    y_pred[:15] ^= 1
    preds = PredictionSet(tuple(f"c{i}" for i in range(100)), y, y_pred, ("A", "B"))
    verdict = paired_test_and_tost(preds, preds, delta=0.05, n_replicates=300, seed=1)
    assert verdict.equivalent and not verdict.significant
    assert verdict.conclusions == ("Equivalent",)
    assert verdict.difference == 0.0


def test_tost_large_gap_is_significant():
    rng = np.random.default_rng(5)
    y = rng.integers(0, 2, size=100)
    worse = y.copy()
    worse[::4] ^= 1
    a = PredictionSet(tuple(f"c{i}" for i in range(100)), y, y.copy(), ("A", "B"))
    b = PredictionSet(tuple(f"c{i}" for i in range(100)), y, worse, ("A", "B"))
    verdict = paired_test_and_tost(a, b, delta=0.05, n_replicates=300, seed=1)
    assert verdict.significant
    assert "Significant Difference" in verdict.conclusions
    assert "Equivalent" not in verdict.conclusions
    assert verdict.difference == pytest.approx(0.25)


def test_tost_reports_equivalent_and_significant_together():
    # a tiny but utterly consistent difference: equivalent within 0.05
    # yet significantly nonzero; both verdicts must appear, never collapsed
    n = 400
    y = np.zeros(n, dtype=np.int64)
    a_pred = y.copy()
    b_pred = y.copy()
    b_pred[:8] = 1  # b is wrong on 2% of cases
    a = PredictionSet(tuple(f"c{i}" for i in range(n)), y, a_pred, ("A", "B"))
    b = PredictionSet(tuple(f"c{i}" for i in range(n)), y, b_pred, ("A", "B"))
    verdict = paired_test_and_tost(a, b, delta=0.05, n_replicates=400, seed=7)
    assert verdict.equivalent and verdict.significant
    assert verdict.conclusions == ("Equivalent", "Significant Difference")


def test_tost_non_inferior_without_equivalence():
    # a's accuracy is clearly higher; the 90% CI sits above -delta but not
    # inside (-delta, +delta), so the verdict is non-inferiority only
    n = 200
    y = np.zeros(n, dtype=np.int64)
    b_pred = y.copy()
    b_pred[: n // 5] = 1  # b wrong on 20%
    a = PredictionSet(tuple(f"c{i}" for i in range(n)), y, y.copy(), ("A", "B"))
    b = PredictionSet(tuple(f"c{i}" for i in range(n)), y, b_pred, ("A", "B"))
    verdict = paired_test_and_tost(a, b, delta=0.05, n_replicates=300, seed=9)
    assert verdict.non_inferior and not verdict.equivalent
    assert "Non-inferior" in verdict.conclusions


def test_tost_input_validation():
    a = _toy()
    with pytest.raises(ValidationError):
        paired_test_and_tost(a, a, delta=0.0)
    mismatched = PredictionSet(("x1", "x2", "x3", "x4"), a.y_true, a.y_pred, a.class_names)
    with pytest.raises(DataError):
        paired_test_and_tost(a, mismatched)


def test_equivalence_simulation_small_true_difference():
    # two classifiers with a 1% true accuracy gap on 500 cases: TOST at
    # delta=0.05 should conclude equivalence nearly always
    n = 500
    hits = 0
    seeds = range(30)
    for sim_seed in seeds:
        rng = np.random.default_rng([808, sim_seed])
        y = np.zeros(n, dtype=np.int64)
        # correlated errors: b fails wherever a fails, plus 1% extra cases;
        # independent error draws would push the paired CI out to the margin
        a_wrong = rng.random(n) < 0.15
        extra = np.zeros(n, dtype=bool)
        extra[rng.choice(np.flatnonzero(~a_wrong), size=n // 100, replace=False)] = True
        a_pred = a_wrong.astype(np.int64)
        b_pred = (a_wrong | extra).astype(np.int64)
        a = PredictionSet(tuple(f"c{i}" for i in range(n)), y, a_pred, ("A", "B"))
        b = PredictionSet(tuple(f"c{i}" for i in range(n)), y, b_pred, ("A", "B"))
        verdict = paired_test_and_tost(a, b, delta=0.05, n_replicates=300, seed=sim_seed)
        hits += verdict.equivalent
    assert hits / len(seeds) >= 0.9
