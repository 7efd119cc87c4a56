"""Metric suite: support-weighted one-vs-rest scores, bootstrap confidence
intervals, and paired bootstrap significance/equivalence decisions.

Weighted metrics follow the pattern sum_c support_c * m_c / n over classes
present in the truth; accuracy is plain top-1. Confidence intervals are
percentile bootstrap over case-level resamples, each replicate drawn from
its own RNG stream derived from (seed, replicate) so replicate order and
thread count cannot change results.

Equivalence testing uses the bootstrap-CI decision rules: a two-tailed
difference test at 95%, two one-sided tests at 90% for equivalence within
(-delta, +delta), and a one-sided non-inferiority bound. Equivalence and
significance are distinct questions and both verdicts are always reported.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, ValidationError

METRIC_NAMES = ("accuracy", "f1", "sensitivity", "specificity", "auroc")
DEFAULT_EQUIVALENCE_DELTA = 0.05
PROB_SIMPLEX_ATOL = 1e-6


@dataclass(frozen=True)
class PredictionSet:
    """Aligned truth/prediction rows, one per evaluated core or case."""

    case_ids: tuple
    y_true: np.ndarray
    y_pred: np.ndarray
    class_names: tuple
    probabilities: np.ndarray = None  # (n, n_classes) or None

    def __post_init__(self):
        n = len(self.case_ids)
        if len(self.y_true) != n or len(self.y_pred) != n:
            raise DataError("prediction rows are misaligned")
        k = len(self.class_names)
        for arr in (self.y_true, self.y_pred):
            a = np.asarray(arr)
            if n and (a.min() < 0 or a.max() >= k):
                raise DataError("label codes out of range for the class list")
        if self.probabilities is not None:
            p = np.asarray(self.probabilities, dtype=np.float64)
            if p.shape != (n, k):
                raise DataError(f"probability block has shape {p.shape}, expected {(n, k)}")
            if n and (p.min() < -PROB_SIMPLEX_ATOL or np.abs(p.sum(axis=1) - 1).max() > PROB_SIMPLEX_ATOL):
                raise DataError("probabilities are not on the simplex")

    @property
    def n_rows(self) -> int:
        return len(self.case_ids)

    def subset(self, rows) -> "PredictionSet":
        rows = np.asarray(rows)
        return PredictionSet(
            case_ids=tuple(self.case_ids[i] for i in rows),
            y_true=np.asarray(self.y_true)[rows],
            y_pred=np.asarray(self.y_pred)[rows],
            class_names=self.class_names,
            probabilities=None if self.probabilities is None else np.asarray(self.probabilities)[rows],
        )


@dataclass
class MetricReport:
    metrics: dict  # name -> (point, ci_low, ci_high)
    per_class_f1: dict  # class name -> f1 (absent classes reported as None)
    confusion: np.ndarray  # rows true, cols predicted
    class_names: tuple
    absent_classes: tuple = ()
    conclusions: dict = field(default_factory=dict)


def confusion_matrix(preds: PredictionSet) -> np.ndarray:
    k = len(preds.class_names)
    out = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(preds.y_true, preds.y_pred):
        out[int(t), int(p)] += 1
    return out


def _per_class_counts(y_true, y_pred, c):
    t = y_true == c
    p = y_pred == c
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    fn = int(np.sum(t & ~p))
    tn = int(np.sum(~t & ~p))
    return tp, fp, fn, tn


def _class_f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def _class_auroc(scores, positives):
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.0
    ranks = rankdata(scores)
    return (ranks[positives].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def weighted_metric(preds: PredictionSet, metric: str) -> float:
    """Support-weighted one-vs-rest metric; accuracy is plain top-1."""
    if metric not in METRIC_NAMES:
        raise ValidationError(f"unknown metric {metric!r}; choose from {METRIC_NAMES}")
    if preds.n_rows == 0:
        raise DataError("empty prediction set")
    y_true = np.asarray(preds.y_true)
    y_pred = np.asarray(preds.y_pred)
    n = len(y_true)
    if metric == "accuracy":
        return float(np.mean(y_true == y_pred))
    if metric == "auroc" and preds.probabilities is None:
        raise DataError("auroc requires per-class probabilities")
    total = 0.0
    for c in range(len(preds.class_names)):
        support = int(np.sum(y_true == c))
        if support == 0:
            continue  # absent class: weight 0
        if metric == "auroc":
            value = _class_auroc(np.asarray(preds.probabilities)[:, c], y_true == c)
        else:
            tp, fp, fn, tn = _per_class_counts(y_true, y_pred, c)
            if metric == "f1":
                value = _class_f1(tp, fp, fn)
            elif metric == "sensitivity":
                value = tp / (tp + fn) if (tp + fn) > 0 else 0.0
            else:  # specificity
                value = tn / (tn + fp) if (tn + fp) > 0 else 0.0
        total += support * value
    return float(total / n)


def _case_row_index(preds: PredictionSet):
    rows_by_case = {}
    for i, cid in enumerate(preds.case_ids):
        rows_by_case.setdefault(cid, []).append(i)
    cases = sorted(rows_by_case)
    return cases, rows_by_case


def _resample_rows(cases, rows_by_case, rng):
    picks = rng.integers(0, len(cases), size=len(cases))
    rows = []
    for p in picks:
        rows.extend(rows_by_case[cases[p]])
    return np.array(rows, dtype=np.int64)


def bootstrap_ci(preds: PredictionSet, metric: str, n_replicates: int = 1000, seed: int = 0):
    """Percentile bootstrap over case-level resamples: (point, lo, hi)."""
    if n_replicates < 1:
        raise ValidationError("n_replicates must be >= 1")
    point = weighted_metric(preds, metric)
    cases, rows_by_case = _case_row_index(preds)
    values = np.empty(n_replicates)
    for r in range(n_replicates):
        rng = np.random.default_rng([int(seed), r])
        rows = _resample_rows(cases, rows_by_case, rng)
        values[r] = weighted_metric(preds.subset(rows), metric)
    lo, hi = np.percentile(values, [2.5, 97.5])
    return point, float(lo), float(hi)


def evaluate(preds: PredictionSet, n_replicates: int = 1000, seed: int = 0) -> MetricReport:
    """Point estimates with bootstrap CIs for the full metric suite."""
    metrics = {}
    for name in METRIC_NAMES:
        if name == "auroc" and preds.probabilities is None:
            continue
        metrics[name] = bootstrap_ci(preds, name, n_replicates, seed)
    y_true = np.asarray(preds.y_true)
    y_pred = np.asarray(preds.y_pred)
    per_class = {}
    absent = []
    for c, name in enumerate(preds.class_names):
        if int(np.sum(y_true == c)) == 0:
            per_class[name] = None
            absent.append(name)
            continue
        tp, fp, fn, _ = _per_class_counts(y_true, y_pred, c)
        per_class[name] = _class_f1(tp, fp, fn)
    return MetricReport(
        metrics=metrics,
        per_class_f1=per_class,
        confusion=confusion_matrix(preds),
        class_names=preds.class_names,
        absent_classes=tuple(absent),
    )


@dataclass(frozen=True)
class PairedComparison:
    difference: float  # metric(a) - metric(b) on the full sets
    ci95: tuple
    ci90: tuple
    significant: bool  # 95% CI excludes zero
    equivalent: bool  # 90% CI within (-delta, +delta)
    non_inferior: bool  # 90% lower bound > -delta
    conclusions: tuple  # human-readable verdict strings, never collapsed
    delta: float
    metric: str
    n_cases: int
    n_replicates: int
    seed: int


def paired_test_and_tost(
    preds_a: PredictionSet,
    preds_b: PredictionSet,
    delta: float = DEFAULT_EQUIVALENCE_DELTA,
    metric: str = "accuracy",
    n_replicates: int = 1000,
    seed: int = 0,
) -> PairedComparison:
    """Bootstrap the paired metric difference and apply the CI decision rules."""
    if delta <= 0:
        raise ValidationError("delta must be positive")
    if preds_a.case_ids != preds_b.case_ids or not np.array_equal(
        np.asarray(preds_a.y_true), np.asarray(preds_b.y_true)
    ):
        raise DataError("paired comparison requires identical cases and truths")
    point = weighted_metric(preds_a, metric) - weighted_metric(preds_b, metric)
    cases, rows_by_case = _case_row_index(preds_a)
    diffs = np.empty(n_replicates)
    for r in range(n_replicates):
        rng = np.random.default_rng([int(seed), r])
        rows = _resample_rows(cases, rows_by_case, rng)
        diffs[r] = weighted_metric(preds_a.subset(rows), metric) - weighted_metric(
            preds_b.subset(rows), metric
        )
    lo95, hi95 = (float(v) for v in np.percentile(diffs, [2.5, 97.5]))
    lo90, hi90 = (float(v) for v in np.percentile(diffs, [5.0, 95.0]))
    significant = lo95 > 0 or hi95 < 0
    equivalent = (-delta < lo90) and (hi90 < delta)
    non_inferior = lo90 > -delta
    conclusions = []
    if equivalent:
        conclusions.append("Equivalent")
    if significant:
        conclusions.append("Significant Difference")
    if not equivalent and non_inferior:
        conclusions.append("Non-inferior")
    if not conclusions:
        conclusions.append("Inconclusive")
    return PairedComparison(
        difference=float(point),
        ci95=(lo95, hi95),
        ci90=(lo90, hi90),
        significant=significant,
        equivalent=equivalent,
        non_inferior=non_inferior,
        conclusions=tuple(conclusions),
        delta=delta,
        metric=metric,
        n_cases=len(cases),
        n_replicates=n_replicates,
        seed=seed,
    )
