"""Derive cell and cytoplasm objects from a nucleus mask.

Cell k is the distance-limited Voronoi region of nucleus k: every pixel
within ``expansion_px`` of nucleus k (Euclidean, nearest pixel of the
nucleus) that is closer to nucleus k than to any other nucleus. Cytoplasm
is the cell minus the nucleus. Equidistant pixels follow the deterministic
nearest-index choice of the distance transform.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import ValidationError

DEFAULT_EXPANSION_PX = 10


def derive_secondary_objects(nuclei: np.ndarray, expansion_px: int = DEFAULT_EXPANSION_PX):
    """Return (cells, cytoplasm) label masks grown from the nuclei mask."""
    if expansion_px < 0:
        raise ValidationError(f"expansion_px must be >= 0, got {expansion_px}")
    nuclei = np.asarray(nuclei)
    distances, (iy, ix) = ndimage.distance_transform_edt(
        nuclei == 0, return_indices=True
    )
    cells = nuclei[iy, ix]
    cells = np.where(distances <= expansion_px, cells, 0)
    cytoplasm = np.where(nuclei > 0, 0, cells)
    return cells.astype(nuclei.dtype), cytoplasm.astype(nuclei.dtype)
