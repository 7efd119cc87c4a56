"""On-disk formats: images, label masks, feature tables, prediction sets.

Images are 8-bit RGB PNG. Label masks are 16-bit grayscale PNG (ids up to
65535). Feature tables are CSV with a JSON sidecar recording the feature
schema hash, config name, and tool version so downstream consumers can
refuse tables built under a different registry.
"""
from __future__ import annotations

import json

import numpy as np
import pandas as pd
from PIL import Image

from . import __version__
from .errors import DataError
from .evaluation import PredictionSet

FEATURE_SIDECAR_SUFFIX = ".meta.json"
MAX_MASK_ID = 65535


def save_image(image: np.ndarray, path) -> None:
    arr = np.asarray(image)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected uint8 RGB image, got {arr.dtype} {arr.shape}")
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_mask(labels: np.ndarray, path) -> None:
    arr = np.asarray(labels)
    if arr.ndim != 2 or arr.min() < 0 or arr.max() > MAX_MASK_ID:
        raise DataError(f"label mask must be 2-D with ids in [0, {MAX_MASK_ID}]")
    Image.fromarray(arr.astype(np.uint16)).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim != 2:
        raise DataError(f"{path}: mask is not single-channel")
    return arr.astype(np.int64)


def save_feature_table(table: pd.DataFrame, path, schema_hash: str, config: str) -> None:
    """CSV plus sidecar. The index (row identity) is written as `row_id`."""
    path = str(path)
    table.to_csv(path, index_label="row_id", lineterminator="\n")
    meta = {
        "schema_hash": schema_hash,
        "config": config,
        "tool_version": __version__,
        "n_rows": int(len(table)),
        "n_columns": int(table.shape[1]),
    }
    with open(path + FEATURE_SIDECAR_SUFFIX, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_feature_table(path, expected_hash: str = ""):
    """Returns (table, meta). Refuses a sidecar hash mismatch."""
    path = str(path)
    try:
        with open(path + FEATURE_SIDECAR_SUFFIX, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"{path}: missing feature sidecar {FEATURE_SIDECAR_SUFFIX}") from exc
    if expected_hash and meta.get("schema_hash") != expected_hash:
        from .errors import SchemaMismatchError

        raise SchemaMismatchError(
            f"{path}: table schema {meta.get('schema_hash', '')[:12]} does not match "
            f"expected {expected_hash[:12]}"
        )
    table = pd.read_csv(path, index_col="row_id")
    return table, meta


def save_predictions(preds: PredictionSet, path) -> None:
    rows = {
        "case_id": list(preds.case_ids),
        "true_label": [preds.class_names[int(c)] for c in preds.y_true],
        "predicted_label": [preds.class_names[int(c)] for c in preds.y_pred],
    }
    if preds.probabilities is not None:
        probs = np.asarray(preds.probabilities)
        for i, name in enumerate(preds.class_names):
            rows[f"prob.{name}"] = probs[:, i]
    pd.DataFrame(rows).to_csv(path, index=False, lineterminator="\n")


def load_predictions(path, class_names=None) -> PredictionSet:
    frame = pd.read_csv(path)
    required = {"case_id", "true_label", "predicted_label"}
    if not required.issubset(frame.columns):
        raise DataError(f"{path}: prediction CSV needs columns {sorted(required)}")
    prob_cols = [c for c in frame.columns if c.startswith("prob.")]
    if class_names is None:
        if prob_cols:
            class_names = tuple(c[len("prob."):] for c in prob_cols)
        else:
            class_names = tuple(
                sorted(set(frame["true_label"]) | set(frame["predicted_label"]))
            )
    code = {name: i for i, name in enumerate(class_names)}
    try:
        y_true = np.array([code[v] for v in frame["true_label"]], dtype=np.int64)
        y_pred = np.array([code[v] for v in frame["predicted_label"]], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"{path}: label {exc.args[0]!r} not in the class list") from exc
    probabilities = None
    if prob_cols:
        ordered = [f"prob.{name}" for name in class_names]
        missing = [c for c in ordered if c not in frame.columns]
        if missing:
            raise DataError(f"{path}: probability columns missing: {missing}")
        probabilities = frame[ordered].to_numpy(dtype=np.float64)
    return PredictionSet(
        case_ids=tuple(frame["case_id"].astype(str)),
        y_true=y_true,
        y_pred=y_pred,
        class_names=tuple(class_names),
        probabilities=probabilities,
    )
