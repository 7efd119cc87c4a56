"""Histogram gradient-boosted trees: leaf-wise growth, focal objective.

One tree per class per round. Split finding uses per-feature quantile bins
computed on the training split only; gains follow the Newton formula

    gain = 0.5 * (GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam))

and leaf values are -lr * G / (H + lam). Categorical features split on
category subsets found by sorting categories by G/(H+lam) and scanning
prefixes. Everything is single-threaded vectorized numpy, so results are
independent of thread count by construction.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, ValidationError
from .loss import balanced_class_weights, focal_grad_hess, focal_loss_mean, softmax
from .model import GbdtModel, Tree

MIN_GAIN = 1e-12
HESSIAN_FLOOR = 1e-16  # trainer-side stabilization; the loss op stays exact
MAX_CATEGORIES = 64
BASE_SCORE_PRIOR_FLOOR = 1e-8


@dataclass
class GbdtParams:
    num_rounds: int = 100
    num_leaves: int = 31
    max_depth: int = 0  # 0 means unlimited
    learning_rate: float = 0.1
    gamma: float = 2.0
    class_weights: tuple = None
    min_samples_leaf: int = 20
    histogram_bins: int = 64
    lambda_reg: float = 1.0
    seed: int = 0

    def validate(self):
        if self.num_rounds < 1 or self.num_leaves < 2:
            raise ValidationError("num_rounds must be >= 1 and num_leaves >= 2")
        if self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0 (0 = unlimited)")
        if not (0 < self.learning_rate <= 1):
            raise ValidationError(f"learning_rate {self.learning_rate} out of (0, 1]")
        if self.gamma < 0:
            raise ValidationError("gamma must be >= 0")
        if self.min_samples_leaf < 1 or self.histogram_bins < 2:
            raise ValidationError("min_samples_leaf >= 1 and histogram_bins >= 2 required")
        if self.lambda_reg < 0:
            raise ValidationError("lambda_reg must be >= 0")
        if self.class_weights is not None and any(w <= 0 for w in self.class_weights):
            raise ValidationError("class weights must be positive")

    def to_dict(self):
        return {
            "num_rounds": self.num_rounds,
            "num_leaves": self.num_leaves,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "gamma": self.gamma,
            "class_weights": None if self.class_weights is None else list(self.class_weights),
            "min_samples_leaf": self.min_samples_leaf,
            "histogram_bins": self.histogram_bins,
            "lambda_reg": self.lambda_reg,
            "seed": self.seed,
        }


def quantile_bin_edges(x: np.ndarray, max_bins: int) -> np.ndarray:
    """Candidate thresholds at training-split quantiles, deduplicated."""
    qs = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
    return np.unique(np.quantile(x, qs))


class _NodeState:
    __slots__ = ("node_id", "rows", "depth", "grad", "hess", "count")

    def __init__(self, node_id, rows, depth, grad, hess):
        self.node_id = node_id
        self.rows = rows
        self.depth = depth
        self.grad = grad
        self.hess = hess
        self.count = len(rows)


class _TreeBuilder:
    """Grows one tree leaf-wise and freezes it into a Tree."""

    def __init__(self, binned, edges, n_edges, numeric_columns, cat_columns, cat_codes, params):
        self.binned = binned  # (n, F_num) uint16, numeric features only
        self.edges = edges  # list of per-feature threshold arrays
        self.n_edges = n_edges  # (F_num,) number of usable thresholds
        self.numeric_columns = numeric_columns  # numeric position -> original index
        self.cat_columns = cat_columns  # original feature indices of categoricals
        self.cat_codes = cat_codes  # (n, F_cat) int codes
        self.params = params
        self.feature = [-1]
        self.threshold = [0.0]
        self.categories = [None]
        self.left = [-1]
        self.right = [-1]
        self.value = [0.0]
        self.cover = [0.0]

    def _new_node(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.categories.append(None)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.cover.append(0.0)
        return len(self.feature) - 1

    def _leaf_value(self, g_sum, h_sum):
        lam = self.params.lambda_reg
        return -self.params.learning_rate * g_sum / (h_sum + lam)

    def _best_numeric(self, state, g, h):
        p = self.params
        rows = state.rows
        nb = p.histogram_bins
        f_num = self.binned.shape[1]
        if f_num == 0:
            return None
        flat = self.binned[rows].astype(np.int64)
        flat += np.arange(f_num, dtype=np.int64)[None, :] * nb
        flat = flat.ravel()
        minlength = f_num * nb
        g_hist = np.bincount(flat, weights=np.repeat(g[rows], f_num), minlength=minlength).reshape(f_num, nb)
        h_hist = np.bincount(flat, weights=np.repeat(h[rows], f_num), minlength=minlength).reshape(f_num, nb)
        c_hist = np.bincount(flat, minlength=minlength).reshape(f_num, nb)
        gl = np.cumsum(g_hist, axis=1)[:, :-1]
        hl = np.cumsum(h_hist, axis=1)[:, :-1]
        cl = np.cumsum(c_hist, axis=1)[:, :-1]
        lam = p.lambda_reg
        g_tot, h_tot, c_tot = state.grad, state.hess, state.count
        gr = g_tot - gl
        hr = h_tot - hl
        cr = c_tot - cl
        parent = g_tot**2 / (h_tot + lam)
        with np.errstate(divide="ignore", invalid="ignore"):
            gains = 0.5 * (gl**2 / (hl + lam) + gr**2 / (hr + lam) - parent)
        bins = np.arange(nb - 1)[None, :]
        valid = (
            (cl >= p.min_samples_leaf)
            & (cr >= p.min_samples_leaf)
            & (bins < self.n_edges[:, None])
        )
        gains = np.where(valid, gains, -np.inf)
        best_flat = int(np.argmax(gains))  # first max: lowest feature, then lowest bin
        f, b = divmod(best_flat, nb - 1)
        best = gains[f, b]
        if not np.isfinite(best):
            return None
        return (float(best), "numeric", int(f), float(self.edges[f][b]))

    def _best_categorical(self, state, g, h):
        p = self.params
        lam = p.lambda_reg
        best = None
        for j, feat_idx in enumerate(self.cat_columns):
            codes = self.cat_codes[state.rows, j]
            counts = np.bincount(codes, minlength=MAX_CATEGORIES)
            present = np.nonzero(counts)[0]
            if len(present) < 2:
                continue
            g_sum = np.bincount(codes, weights=g[state.rows], minlength=MAX_CATEGORIES)
            h_sum = np.bincount(codes, weights=h[state.rows], minlength=MAX_CATEGORIES)
            ratio = g_sum[present] / (h_sum[present] + lam)
            order = np.lexsort((present, ratio))  # ratio ascending, ties by code
            ordered = present[order]
            gl = np.cumsum(g_sum[ordered])[:-1]
            hl = np.cumsum(h_sum[ordered])[:-1]
            cl = np.cumsum(counts[ordered])[:-1]
            gr = state.grad - gl
            hr = state.hess - hl
            cr = state.count - cl
            gains = 0.5 * (
                gl**2 / (hl + lam) + gr**2 / (hr + lam) - state.grad**2 / (state.hess + lam)
            )
            ok = (cl >= p.min_samples_leaf) & (cr >= p.min_samples_leaf)
            gains = np.where(ok, gains, -np.inf)
            i = int(np.argmax(gains))
            if not np.isfinite(gains[i]):
                continue
            cand = (float(gains[i]), "categorical", int(feat_idx), tuple(int(c) for c in sorted(ordered[: i + 1])))
            if best is None or cand[0] > best[0]:
                best = cand
        return best

    def _find_split(self, state, g, h):
        num = self._best_numeric(state, g, h)
        cat = self._best_categorical(state, g, h)
        if num is None:
            return cat
        if cat is None or num[0] >= cat[0]:
            return num
        return cat

    def build(self, g, h):
        p = self.params
        n = len(g)
        rows = np.arange(n)
        root = _NodeState(0, rows, 0, float(g.sum()), float(h.sum()))
        self.cover[0] = float(n)
        self.value[0] = self._leaf_value(root.grad, root.hess)
        heap = []
        order = 0
        if root.count >= 2 * p.min_samples_leaf and (p.max_depth == 0 or root.depth < p.max_depth):
            split = self._find_split(root, g, h)
            if split is not None and split[0] > MIN_GAIN:
                heapq.heappush(heap, (-split[0], order, root, split))
                order += 1
        leaves = 1
        while heap and leaves < p.num_leaves:
            _, _, state, split = heapq.heappop(heap)
            _, split_kind, feat, payload = split
            if split_kind == "numeric":
                # bin(x) <= b is exactly x <= edges[b]; searchsorted recovers b
                bin_cut = np.searchsorted(self.edges[feat], payload, side="left")
                go_left = self.binned[state.rows, feat] <= bin_cut
                self.feature[state.node_id] = int(self.numeric_columns[feat])
                self.threshold[state.node_id] = float(payload)
            else:
                j = self.cat_columns.index(feat)
                go_left = np.isin(self.cat_codes[state.rows, j], payload)
                self.feature[state.node_id] = int(feat)
                self.categories[state.node_id] = payload
            left_rows = state.rows[go_left]
            right_rows = state.rows[~go_left]
            children = []
            for child_rows in (left_rows, right_rows):
                node_id = self._new_node()
                gs = float(g[child_rows].sum())
                hs = float(h[child_rows].sum())
                child = _NodeState(node_id, child_rows, state.depth + 1, gs, hs)
                self.cover[node_id] = float(len(child_rows))
                self.value[node_id] = self._leaf_value(gs, hs)
                children.append(child)
            self.left[state.node_id] = children[0].node_id
            self.right[state.node_id] = children[1].node_id
            leaves += 1
            for child in children:
                if leaves >= p.num_leaves:
                    break
                if child.count < 2 * p.min_samples_leaf:
                    continue
                if p.max_depth and child.depth >= p.max_depth:
                    continue
                split = self._find_split(child, g, h)
                if split is not None and split[0] > MIN_GAIN:
                    heapq.heappush(heap, (-split[0], order, child, split))
                    order += 1
        return self._freeze()

    def _freeze(self):
        tree = Tree(
            feature=np.array(self.feature, dtype=np.int32),
            threshold=np.array(self.threshold, dtype=np.float64),
            categories=list(self.categories),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            value=np.array(self.value, dtype=np.float64),
            cover=np.array(self.cover, dtype=np.float64),
        )
        # internal nodes carry no output
        internal = tree.left >= 0
        tree.value[internal] = 0.0
        return tree


def train(
    X: np.ndarray,
    y: np.ndarray,
    params: GbdtParams,
    feature_names=None,
    categorical_features=(),
    class_names=None,
    schema_hash: str = "",
) -> GbdtModel:
    """Fit the boosted ensemble on the given (training) rows only.

    categorical_features lists column indices holding small non-negative
    integer codes. class_names fixes the label space; defaults to the codes
    present in y.
    """
    params.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise DataError(f"bad training shapes X{X.shape} y{y.shape}")
    if len(X) == 0:
        raise DataError("empty training set")
    if feature_names is None:
        feature_names = tuple(f"f{i}" for i in range(X.shape[1]))
    feature_names = tuple(feature_names)
    if len(feature_names) != X.shape[1]:
        raise DataError("feature_names length does not match X")
    if class_names is None:
        n_classes = int(y.max()) + 1
        class_names = tuple(str(c) for c in range(n_classes))
    else:
        class_names = tuple(class_names)
        n_classes = len(class_names)
    if y.min() < 0 or y.max() >= n_classes:
        raise DataError("labels out of range for the class list")

    categorical_features = tuple(sorted(int(c) for c in categorical_features))
    for c in categorical_features:
        col = X[:, c]
        if np.any(col < 0) or np.any(col != np.floor(col)) or col.max() >= MAX_CATEGORIES:
            raise DataError(f"categorical column {c} must hold integer codes in [0, {MAX_CATEGORIES})")

    numeric_columns = [i for i in range(X.shape[1]) if i not in categorical_features]
    edges = []
    n_edges = []
    for i in numeric_columns:
        e = quantile_bin_edges(X[:, i], params.histogram_bins)
        edges.append(e)
        n_edges.append(len(e))
    n_edges = np.array(n_edges, dtype=np.int64)
    binned = np.empty((len(X), len(numeric_columns)), dtype=np.uint16)
    for pos, i in enumerate(numeric_columns):
        binned[:, pos] = np.searchsorted(edges[pos], X[:, i], side="left")
    cat_codes = X[:, categorical_features].astype(np.int64) if categorical_features else np.empty((len(X), 0), dtype=np.int64)

    if params.class_weights is not None:
        if len(params.class_weights) != n_classes:
            raise ValidationError("class_weights length must equal the class count")
        weights = np.asarray(params.class_weights, dtype=np.float64)
    else:
        weights = balanced_class_weights(y, n_classes)

    priors = np.bincount(y, minlength=n_classes) / len(y)
    base_scores = np.log(np.maximum(priors, BASE_SCORE_PRIOR_FLOOR))

    margins = np.tile(base_scores, (len(X), 1))
    trees = [[] for _ in range(n_classes)]
    for _ in range(params.num_rounds):
        grad, hess = focal_grad_hess(margins, y, params.gamma, weights)
        hess = np.maximum(hess, HESSIAN_FLOOR)
        for c in range(n_classes):
            builder = _TreeBuilder(
                binned, edges, n_edges, numeric_columns, list(categorical_features), cat_codes, params
            )
            tree = builder.build(grad[:, c].copy(), hess[:, c].copy())
            trees[c].append(tree)
            margins[:, c] += tree.predict(X)
    model = GbdtModel(
        class_names=class_names,
        feature_names=feature_names,
        categorical_features=categorical_features,
        base_scores=base_scores,
        trees=trees,
        params=params.to_dict(),
        schema_hash=schema_hash,
    )
    return model


def stratified_case_folds(case_ids, case_labels, n_folds: int, seed: int):
    """Deterministic class-stratified fold assignment at case level."""
    if n_folds < 2:
        raise ValidationError("n_folds must be >= 2")
    by_class = {}
    for cid, lab in sorted(zip(case_ids, case_labels)):
        by_class.setdefault(lab, []).append(cid)
    assignment = {}
    for lab in sorted(by_class):
        ids = by_class[lab]
        rng = np.random.default_rng([int(seed), 7919, int(lab)])
        order = rng.permutation(len(ids))
        for pos, idx in enumerate(order):
            assignment[ids[idx]] = pos % n_folds
    return assignment


def cross_validate(
    X: np.ndarray,
    y: np.ndarray,
    case_ids,
    core_ids,
    params: GbdtParams,
    n_folds: int = 5,
    feature_names=None,
    categorical_features=(),
    class_names=None,
    schema_hash: str = "",
) -> dict:
    """K-fold CV stratified by class at case level; core-level accuracy."""
    case_ids = np.asarray(case_ids)
    core_ids = np.asarray(core_ids)
    y = np.asarray(y, dtype=np.int64)
    case_label = {}
    for cid, lab in zip(case_ids, y):
        case_label.setdefault(cid, int(lab))
    fold_of = stratified_case_folds(
        sorted(case_label), [case_label[c] for c in sorted(case_label)], n_folds, params.seed
    )
    accuracies = []
    for fold in range(n_folds):
        val_mask = np.array([fold_of[c] == fold for c in case_ids])
        if not val_mask.any() or val_mask.all():
            continue
        model = train(
            X[~val_mask],
            y[~val_mask],
            params,
            feature_names=feature_names,
            categorical_features=categorical_features,
            class_names=class_names,
            schema_hash=schema_hash,
        )
        correct = 0
        total = 0
        for core in np.unique(core_ids[val_mask]):
            rows = val_mask & (core_ids == core)
            label_idx, _ = model.predict_core(X[rows])
            truth = y[rows][0]
            correct += int(label_idx == truth)
            total += 1
        accuracies.append(correct / total)
    return {
        "fold_accuracies": accuracies,
        "mean": float(np.mean(accuracies)) if accuracies else 0.0,
        "std": float(np.std(accuracies)) if accuracies else 0.0,
    }
