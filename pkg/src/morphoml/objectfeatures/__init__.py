"""Per-object feature extraction from label masks and stain channels.

The patch driver produces one table per object kind:

    nucleus    62 shape + 45 intensity (hematoxylin, eosin, gray) + 13 positional
    cell       62 shape + 30 intensity (hematoxylin, eosin) + 13 positional
    cytoplasm  62 shape + 30 intensity + 2 cross-object ratios

Tables are pandas DataFrames indexed by object id, deterministically ordered.
"""
from __future__ import annotations

import numpy as np
import pandas as pd
from scipy import ndimage

from ..errors import DataError
from .intensity import (
    INTENSITY_STAT_NAMES,
    compute_intensity_features,
    intensity_feature_table,
)
from .secondary import DEFAULT_EXPANSION_PX, derive_secondary_objects
from .shape import (
    ARCH_FEATURE_NAMES,
    SHAPE_FEATURE_NAMES,
    arch_feature_table,
    compute_arch_features,
    compute_shape_features,
    shape_feature_table,
)

OBJECT_KINDS = ("nucleus", "cell", "cytoplasm")

NUCLEUS_CHANNELS = ("hematoxylin", "eosin", "gray")
SECONDARY_CHANNELS = ("hematoxylin", "eosin")

RATIO_FEATURE_NAMES = ("nucleus_cell_area_ratio", "cytoplasm_nucleus_hematoxylin_ratio")


def intensity_column_names(channels):
    return tuple(
        f"intensity_{channel}_{stat}"
        for channel in channels
        for stat in INTENSITY_STAT_NAMES
    )


KIND_COLUMNS = {
    "nucleus": SHAPE_FEATURE_NAMES
    + intensity_column_names(NUCLEUS_CHANNELS)
    + ARCH_FEATURE_NAMES,
    "cell": SHAPE_FEATURE_NAMES
    + intensity_column_names(SECONDARY_CHANNELS)
    + ARCH_FEATURE_NAMES,
    "cytoplasm": SHAPE_FEATURE_NAMES
    + intensity_column_names(SECONDARY_CHANNELS)
    + RATIO_FEATURE_NAMES,
}


def validate_label_mask(labels: np.ndarray, repair: bool = True):
    """Check mask ids are non-negative and 8-connected per id.

    A fragmented id (several 8-connected components sharing one id) is
    repaired by keeping the id on its first component (row-major order) and
    relabeling the others to fresh ids above the current maximum. Returns
    (labels, repairs) where repairs lists (old_id, new_id) pairs.

    Raises DataError for negative ids, or for fragmented ids when
    repair=False.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DataError(f"label mask must be 2-D, got shape {labels.shape}")
    if labels.size and labels.min() < 0:
        raise DataError("label mask contains negative ids")
    repairs = []
    next_id = int(labels.max()) + 1 if labels.size else 1
    out = None
    structure = np.ones((3, 3))
    for obj_id, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        mask = labels[sl] == obj_id
        comp, n = ndimage.label(mask, structure=structure)
        if n <= 1:
            continue
        if not repair:
            raise DataError(f"object id {obj_id} is not 8-connected ({n} components)")
        if out is None:
            out = labels.copy()
        for k in range(2, n + 1):
            piece = comp == k
            region = out[sl]
            region[piece] = next_id
            repairs.append((obj_id, next_id))
            next_id += 1
    return (labels if out is None else out), repairs


def _ratio_features(nuclei, cells, cytoplasm, hematoxylin, cyto_ids):
    """Cytoplasmic cross-object ratios for each cytoplasm object id."""
    nuc_areas = np.bincount(nuclei.ravel())
    cell_areas = np.bincount(cells.ravel())
    nuc_h = np.bincount(nuclei.ravel(), weights=hematoxylin.ravel())
    cyto_h = np.bincount(cytoplasm.ravel(), weights=hematoxylin.ravel())
    cyto_areas = np.bincount(cytoplasm.ravel())
    rows = np.zeros((len(cyto_ids), 2))
    for i, obj_id in enumerate(cyto_ids):
        cell_area = cell_areas[obj_id] if obj_id < len(cell_areas) else 0
        nuc_area = nuc_areas[obj_id] if obj_id < len(nuc_areas) else 0
        rows[i, 0] = nuc_area / cell_area if cell_area > 0 else 0.0
        nuc_mean = nuc_h[obj_id] / nuc_area if nuc_area > 0 else 0.0
        cyto_mean = cyto_h[obj_id] / cyto_areas[obj_id] if cyto_areas[obj_id] > 0 else 0.0
        rows[i, 1] = cyto_mean / nuc_mean if nuc_mean > 0 else 0.0
    return rows


def extract_object_tables(
    nuclei: np.ndarray,
    channels: dict,
    expansion_px: int = DEFAULT_EXPANSION_PX,
) -> dict:
    """Measure every nucleus, derived cell, and cytoplasm in one patch.

    channels must provide 2-D float arrays for "hematoxylin", "eosin", and
    "gray", each matching the mask shape. Returns {kind: DataFrame}.
    """
    nuclei = np.asarray(nuclei)
    for name in NUCLEUS_CHANNELS:
        if name not in channels:
            raise DataError(f"missing channel {name!r}")
        if np.asarray(channels[name]).shape != nuclei.shape:
            raise DataError(f"channel {name!r} shape does not match mask")
    cells, cytoplasm = derive_secondary_objects(nuclei, expansion_px)

    tables = {}
    kind_masks = {"nucleus": nuclei, "cell": cells, "cytoplasm": cytoplasm}
    kind_channels = {
        "nucleus": NUCLEUS_CHANNELS,
        "cell": SECONDARY_CHANNELS,
        "cytoplasm": SECONDARY_CHANNELS,
    }
    for kind in OBJECT_KINDS:
        mask = kind_masks[kind]
        ids, shape_rows = shape_feature_table(mask)
        blocks = [shape_rows]
        for channel in kind_channels[kind]:
            _, rows = intensity_feature_table(mask, channels[channel])
            blocks.append(rows)
        if kind == "cytoplasm":
            blocks.append(
                _ratio_features(nuclei, cells, cytoplasm, np.asarray(channels["hematoxylin"]), ids)
            )
        else:
            _, arch_rows = arch_feature_table(mask)
            blocks.append(arch_rows)
        data = np.hstack(blocks) if ids else np.empty((0, len(KIND_COLUMNS[kind])))
        tables[kind] = pd.DataFrame(data, index=ids, columns=list(KIND_COLUMNS[kind]))
    return tables


__all__ = [
    "ARCH_FEATURE_NAMES",
    "DEFAULT_EXPANSION_PX",
    "INTENSITY_STAT_NAMES",
    "KIND_COLUMNS",
    "NUCLEUS_CHANNELS",
    "OBJECT_KINDS",
    "RATIO_FEATURE_NAMES",
    "SECONDARY_CHANNELS",
    "SHAPE_FEATURE_NAMES",
    "compute_arch_features",
    "compute_intensity_features",
    "compute_shape_features",
    "derive_secondary_objects",
    "extract_object_tables",
    "intensity_column_names",
    "validate_label_mask",
]
