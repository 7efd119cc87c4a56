"""Exact path-dependent tree-Shapley attribution for the boosted ensembles.

Implements the polynomial-time leaf/path algorithm over each tree's recorded
training cover counts, so the background distribution is the one the trees
were grown on. Attributions are in margin units and additive: for every
class, base + sum(values) reproduces the model margin to tight tolerance.

Grouped reports sum raw signed values inside each group of a feature
partition. Parsimonious selection ranks features by mean absolute value per
class over a set of rows and unions the per-class top-k lists.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ValidationError
from .gbdt.model import GbdtModel, Tree

LOCAL_ACCURACY_ATOL = 1e-6


@dataclass(frozen=True)
class AttributionReport:
    """Per-class, per-feature Shapley values for one input vector."""

    values: np.ndarray  # (n_classes, n_features), margin units
    base_values: np.ndarray  # (n_classes,)
    margins: np.ndarray  # (n_classes,) model output for the input
    feature_names: tuple
    class_names: tuple

    def check_local_accuracy(self, atol: float = LOCAL_ACCURACY_ATOL):
        recon = self.base_values + self.values.sum(axis=1)
        err = np.abs(recon - self.margins).max()
        if err > atol:
            raise DataError(f"attribution does not sum to the margin (max err {err:.3e})")


def _extend(path, pz, po, pi):
    """Grow the subset-permutation path by one split (returns a copy)."""
    length = len(path)
    out = [entry.copy() for entry in path]
    out.append([pi, pz, po, 1.0 if length == 0 else 0.0])
    for i in range(length, 0, -1):
        out[i][3] += po * out[i - 1][3] * i / (length + 1)
        out[i - 1][3] = pz * out[i - 1][3] * (length + 1 - i) / (length + 1)
    return out


def _unwind(path, i):
    """Remove the path entry at index i, undoing its _extend weight updates."""
    length = len(path)
    one = path[i][2]
    zero = path[i][1]
    n = path[length - 1][3]
    out = [entry.copy() for entry in path[: length - 1]]
    for j in range(length - 2, -1, -1):
        if one != 0:
            t = out[j][3]
            out[j][3] = n * length / ((j + 1) * one)
            n = t - out[j][3] * zero * (length - (j + 1)) / length
        else:
            out[j][3] = out[j][3] * length / (zero * (length - (j + 1)))
    for j in range(i, length - 1):
        out[j][0], out[j][1], out[j][2] = path[j + 1][0], path[j + 1][1], path[j + 1][2]
    return out


def _unwound_sum(path, i):
    """Total weight of _unwind(path, i) without materializing it."""
    length = len(path)
    one = path[i][2]
    zero = path[i][1]
    total = 0.0
    if one != 0:
        n = path[length - 1][3]
        for j in range(length - 2, -1, -1):
            tmp = n * length / ((j + 1) * one)
            total += tmp
            n = path[j][3] - tmp * zero * (length - (j + 1)) / length
    else:
        for j in range(length - 2, -1, -1):
            total += path[j][3] * length / (zero * (length - (j + 1)))
    return total


def _goes_left(tree: Tree, node: int, x: np.ndarray) -> bool:
    f = tree.feature[node]
    if tree.categories[node] is not None:
        return int(x[f]) in tree.categories[node]
    return x[f] <= tree.threshold[node]


def _tree_shap_single(tree: Tree, x: np.ndarray, phi: np.ndarray):
    """Accumulate one tree's Shapley values for input x into phi."""

    def recurse(node, path, pz, po, pi):
        path = _extend(path, pz, po, pi)
        if tree.is_leaf(node):
            leaf_value = tree.value[node]
            for i in range(1, len(path)):
                w = _unwound_sum(path, i)
                phi[path[i][0]] += w * (path[i][2] - path[i][1]) * leaf_value
            return
        if _goes_left(tree, node, x):
            hot, cold = int(tree.left[node]), int(tree.right[node])
        else:
            hot, cold = int(tree.right[node]), int(tree.left[node])
        feat = int(tree.feature[node])
        iz, io = 1.0, 1.0
        k = next((i for i in range(1, len(path)) if path[i][0] == feat), -1)
        if k >= 0:
            iz, io = path[k][1], path[k][2]
            path = _unwind(path, k)
        denom = tree.cover[node]
        recurse(hot, path, iz * tree.cover[hot] / denom, io, feat)
        recurse(cold, path, iz * tree.cover[cold] / denom, 0.0, feat)

    recurse(0, [], 1.0, 1.0, -1)


def tree_shap(model: GbdtModel, x, expected_schema_hash: str = "") -> AttributionReport:
    """Exact Shapley attribution of every class margin for one input row."""
    if expected_schema_hash:
        model.check_schema(expected_schema_hash)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if len(x) != len(model.feature_names):
        raise DataError(
            f"input has {len(x)} features, model expects {len(model.feature_names)}"
        )
    n_classes = model.n_classes
    n_features = len(x)
    values = np.zeros((n_classes, n_features))
    base = np.array(model.base_scores, dtype=np.float64)
    for c in range(n_classes):
        for tree in model.trees[c]:
            _tree_shap_single(tree, x, values[c])
            base[c] += tree.expected_value()
    margins = model.predict_margins(x[None, :])[0]
    report = AttributionReport(
        values=values,
        base_values=base,
        margins=margins,
        feature_names=model.feature_names,
        class_names=model.class_names,
    )
    report.check_local_accuracy()
    return report


def group_attribution(report: AttributionReport, grouping: dict) -> dict:
    """Sum signed values inside each group of a feature partition.

    grouping maps group name -> iterable of feature indices and must cover
    every feature exactly once.
    """
    n_features = report.values.shape[1]
    seen = np.zeros(n_features, dtype=bool)
    for name, members in grouping.items():
        idx = np.asarray(sorted(int(i) for i in members), dtype=np.int64)
        if len(idx) == 0:
            raise ValidationError(f"group {name!r} is empty")
        if idx.min() < 0 or idx.max() >= n_features:
            raise ValidationError(f"group {name!r} has out-of-range feature indices")
        if seen[idx].any():
            raise ValidationError(f"group {name!r} overlaps another group")
        seen[idx] = True
    if not seen.all():
        missing = int((~seen).sum())
        raise ValidationError(f"grouping is not a partition: {missing} features unassigned")
    return {
        name: report.values[:, sorted(int(i) for i in members)].sum(axis=1)
        for name, members in grouping.items()
    }


def mean_abs_attribution(model: GbdtModel, X) -> np.ndarray:
    """Mean |Shapley value| per (class, feature) over the given rows."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("expected a 2-D row matrix")
    total = np.zeros((model.n_classes, len(model.feature_names)))
    for row in X:
        total += np.abs(tree_shap(model, row).values)
    return total / max(len(X), 1)


def select_top_features(model: GbdtModel, X, k_per_class: int) -> tuple:
    """Union of each class's top-k features by mean |Shapley value|.

    The result is deduplicated and ordered class by class, rank by rank, so
    reruns on the same inputs give the same tuple.
    """
    if k_per_class < 1:
        raise ValidationError("k_per_class must be >= 1")
    mean_abs = mean_abs_attribution(model, X)
    chosen = []
    seen = set()
    ranks = np.argsort(-mean_abs, axis=1, kind="stable")  # descending, ties by index
    for c in range(model.n_classes):
        for f in ranks[c, :k_per_class]:
            if int(f) not in seen:
                seen.add(int(f))
                chosen.append(int(f))
    return tuple(chosen)
