"""Boosted-tree model containers, prediction, and on-disk format.

The JSON format is canonical (sorted keys, no whitespace) so a fitted model
serializes byte-identically across runs and thread settings. A sha256
checksum over the canonical document (minus the checksum field itself)
detects corruption; the stored feature-schema hash lets consumers refuse
feature tables built under a different registry.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, SchemaMismatchError

MODEL_MAGIC = "morphoml-gbdt"
MODEL_VERSION = 1


@dataclass
class Tree:
    """One regression tree. Node 0 is the root; leaves have left == -1.

    Numeric rule: x[feature] <= threshold goes left (NaN goes right).
    Categorical rule: int(x[feature]) in categories goes left.
    cover holds the training row count through each node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    categories: list
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(len(X), dtype=np.float64)
        for i in range(len(X)):
            out[i] = self.value[self.leaf_index(X[i])]
        return out

    def leaf_index(self, x: np.ndarray) -> int:
        node = 0
        while self.left[node] >= 0:
            f = self.feature[node]
            if self.categories[node] is not None:
                go_left = int(x[f]) in self.categories[node]
            else:
                go_left = x[f] <= self.threshold[node]
            node = self.left[node] if go_left else self.right[node]
        return int(node)

    def expected_value(self) -> float:
        """Cover-weighted mean leaf output (the tree's a-priori prediction)."""
        total = 0.0
        stack = [(0, 1.0)]
        while stack:
            node, weight = stack.pop()
            if self.is_leaf(node):
                total += weight * self.value[node]
                continue
            lf, rt = int(self.left[node]), int(self.right[node])
            denom = self.cover[node]
            if denom <= 0:
                continue
            stack.append((lf, weight * self.cover[lf] / denom))
            stack.append((rt, weight * self.cover[rt] / denom))
        return total

    def to_dict(self) -> dict:
        return {
            "feature": [int(v) for v in self.feature],
            "threshold": [float(v) for v in self.threshold],
            "categories": [None if c is None else [int(v) for v in c] for c in self.categories],
            "left": [int(v) for v in self.left],
            "right": [int(v) for v in self.right],
            "value": [float(v) for v in self.value],
            "cover": [float(v) for v in self.cover],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.array(d["feature"], dtype=np.int32),
            threshold=np.array(d["threshold"], dtype=np.float64),
            categories=[None if c is None else tuple(c) for c in d["categories"]],
            left=np.array(d["left"], dtype=np.int32),
            right=np.array(d["right"], dtype=np.int32),
            value=np.array(d["value"], dtype=np.float64),
            cover=np.array(d["cover"], dtype=np.float64),
        )


@dataclass
class GbdtModel:
    class_names: tuple
    feature_names: tuple
    categorical_features: tuple
    base_scores: np.ndarray
    trees: list  # trees[c] is the list of trees for class c, one per round
    params: dict = field(default_factory=dict)
    schema_hash: str = ""

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_rounds(self) -> int:
        return len(self.trees[0]) if self.trees else 0

    def check_schema(self, expected_hash: str):
        if expected_hash and self.schema_hash and expected_hash != self.schema_hash:
            raise SchemaMismatchError(
                f"model was fit under feature schema {self.schema_hash[:12]} "
                f"but the provided table has schema {expected_hash[:12]}"
            )

    def predict_margins(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise DataError(
                f"expected {len(self.feature_names)} feature columns, got {X.shape}"
            )
        margins = np.tile(self.base_scores, (len(X), 1))
        for c in range(self.n_classes):
            for tree in self.trees[c]:
                margins[:, c] += tree.predict(X)
        return margins

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        from .loss import softmax

        return softmax(self.predict_margins(X))

    def predict_label(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def predict_core(self, X_patches: np.ndarray):
        """Core-level call from patch rows: plurality vote over patch argmax.

        Vote ties break toward the higher mean core probability, then the
        lower class index. Returns (class_index, mean_probabilities).
        """
        probs = self.predict_proba(X_patches)
        core_probs = probs.mean(axis=0)
        votes = np.bincount(np.argmax(probs, axis=1), minlength=self.n_classes)
        top = votes.max()
        tied = np.nonzero(votes == top)[0]
        if len(tied) == 1:
            return int(tied[0]), core_probs
        best = tied[np.argmax(core_probs[tied])]  # argmax keeps lowest index on ties
        return int(best), core_probs

    def to_dict(self) -> dict:
        return {
            "magic": MODEL_MAGIC,
            "version": MODEL_VERSION,
            "class_names": list(self.class_names),
            "feature_names": list(self.feature_names),
            "categorical_features": list(self.categorical_features),
            "base_scores": [float(v) for v in self.base_scores],
            "trees": [[t.to_dict() for t in per_class] for per_class in self.trees],
            "params": self.params,
            "schema_hash": self.schema_hash,
        }


def _canonical(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def model_checksum(doc: dict) -> str:
    body = {k: v for k, v in doc.items() if k != "checksum"}
    return hashlib.sha256(_canonical(body).encode("utf-8")).hexdigest()


def save_model(model: GbdtModel, path) -> None:
    doc = model.to_dict()
    doc["checksum"] = model_checksum(doc)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_canonical(doc))
        fh.write("\n")


def load_model(path) -> GbdtModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("magic") != MODEL_MAGIC:
        raise DataError("not a recognized model file (bad magic)")
    if doc.get("version") != MODEL_VERSION:
        raise DataError(f"unsupported model version {doc.get('version')!r}")
    stated = doc.get("checksum")
    if stated != model_checksum(doc):
        raise DataError("model checksum mismatch; file is corrupt or was edited")
    return GbdtModel(
        class_names=tuple(doc["class_names"]),
        feature_names=tuple(doc["feature_names"]),
        categorical_features=tuple(doc["categorical_features"]),
        base_scores=np.array(doc["base_scores"], dtype=np.float64),
        trees=[[Tree.from_dict(t) for t in per_class] for per_class in doc["trees"]],
        params=doc.get("params", {}),
        schema_hash=doc.get("schema_hash", ""),
    )
