"""Patch tiling, background filtering, and H&E stain separation.

Color deconvolution follows the optical-density model: for each channel
``OD_c = -log10((I_c + eps) / 255)`` and ``OD = C @ M`` where the rows of M
are unit-norm stain vectors (hematoxylin, eosin, residual). Concentrations
are recovered with the matrix inverse and clamped at zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

SATURATION_THRESHOLD = 0.05
BACKGROUND_PATCH_FRACTION = 0.95
DEFAULT_GRID_N = 4
OD_EPS = 1.0 / 255.0  # in 8-bit DN units; bounds OD at I=0 without biasing bright pixels

# Published H&E absorption vectors; rows are normalized at import and the
# residual row is their normalized cross product.
DEFAULT_STAIN_VECTORS = np.array(
    [
        [0.650, 0.704, 0.286],  # hematoxylin
        [0.072, 0.990, 0.105],  # eosin
    ]
)

# Rec. 709 luma weights, matching the common rgb2gray convention.
GRAY_WEIGHTS = np.array([0.2125, 0.7154, 0.0721])


@dataclass(frozen=True)
class CoreImage:
    pixels: np.ndarray  # H x W x 3 uint8
    core_id: str
    microns_per_pixel: float = 0.25


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray
    grid_index: tuple  # (row, col)
    case_id: str = ""
    core_id: str = ""


@dataclass(frozen=True)
class StainChannels:
    hematoxylin: np.ndarray
    eosin: np.ndarray


def stain_matrix(vectors=None) -> np.ndarray:
    """3x3 unit-norm stain matrix: hematoxylin, eosin, residual rows."""
    vec = DEFAULT_STAIN_VECTORS if vectors is None else np.asarray(vectors, dtype=float)
    if vec.shape != (2, 3):
        raise ValidationError(f"expected two 3-vectors for H and E, got shape {vec.shape}")
    h = vec[0] / np.linalg.norm(vec[0])
    e = vec[1] / np.linalg.norm(vec[1])
    r = np.cross(h, e)
    nr = np.linalg.norm(r)
    if nr < 1e-8:
        raise ValidationError("stain vectors are collinear")
    return np.stack([h, e, r / nr])


_DEFAULT_MATRIX = stain_matrix()
_DEFAULT_INVERSE = np.linalg.inv(_DEFAULT_MATRIX)


def grid_slices(height: int, width: int, grid_n: int):
    """Row-major list of ((row, col), (yslice, xslice)) tiles.

    grid_n must be a perfect square; the last row/column absorbs remainder
    pixels so the tiles partition the image exactly.
    """
    side = math.isqrt(int(grid_n))
    if side * side != grid_n or grid_n < 1:
        raise ValidationError(f"grid_n must be a positive perfect square, got {grid_n}")
    if height < side or width < side:
        raise ValidationError(f"core {height}x{width} too small for a {side}x{side} grid")
    ph, pw = height // side, width // side
    tiles = []
    for r in range(side):
        y0 = r * ph
        y1 = (r + 1) * ph if r < side - 1 else height
        for c in range(side):
            x0 = c * pw
            x1 = (c + 1) * pw if c < side - 1 else width
            tiles.append(((r, c), (slice(y0, y1), slice(x0, x1))))
    return tiles


def extract_patch_grid(core: CoreImage, grid_n: int = DEFAULT_GRID_N, case_id: str = ""):
    """Tile a core image into sqrt(grid_n) x sqrt(grid_n) patches, row-major."""
    pixels = np.asarray(core.pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValidationError(f"core image must be HxWx3, got shape {pixels.shape}")
    patches = []
    for (r, c), (ys, xs) in grid_slices(pixels.shape[0], pixels.shape[1], grid_n):
        patches.append(Patch(pixels[ys, xs], (r, c), case_id, core.core_id))
    return patches


def saturation(pixels: np.ndarray) -> np.ndarray:
    """HSV saturation per pixel, (max-min)/max on [0,1] RGB, 0 where max is 0."""
    rgb = np.asarray(pixels, dtype=np.float64) / 255.0
    cmax = rgb.max(axis=-1)
    cmin = rgb.min(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sat = np.where(cmax > 0, (cmax - cmin) / np.where(cmax > 0, cmax, 1.0), 0.0)
    return sat


def background_fraction(pixels: np.ndarray) -> float:
    """Fraction of pixels with saturation below the background threshold."""
    return float(np.mean(saturation(pixels) < SATURATION_THRESHOLD))


def is_background(pixels: np.ndarray) -> bool:
    return background_fraction(pixels) > BACKGROUND_PATCH_FRACTION


def rgb_to_od(pixels: np.ndarray) -> np.ndarray:
    """Per-channel optical density of 8-bit RGB (any float values accepted)."""
    arr = np.asarray(pixels, dtype=np.float64)
    return -np.log10((arr + OD_EPS) / 255.0)


def od_to_rgb(od: np.ndarray) -> np.ndarray:
    """Forward model I = 255 * 10**(-OD), returned as float (not quantized)."""
    return 255.0 * np.power(10.0, -np.asarray(od, dtype=np.float64))


def concentrations_to_rgb(concentrations: np.ndarray, matrix=None) -> np.ndarray:
    """Synthesize float RGB from per-pixel (h, e, residual) concentrations."""
    m = _DEFAULT_MATRIX if matrix is None else matrix
    conc = np.asarray(concentrations, dtype=np.float64)
    if conc.shape[-1] == 2:
        conc = np.concatenate([conc, np.zeros(conc.shape[:-1] + (1,))], axis=-1)
    return od_to_rgb(conc @ m)


def deconvolve_stains(pixels: np.ndarray, matrix=None) -> StainChannels:
    """Separate an RGB patch into hematoxylin and eosin concentration maps."""
    if matrix is None:
        inv = _DEFAULT_INVERSE
    else:
        inv = np.linalg.inv(matrix)
    od = rgb_to_od(pixels)
    conc = od @ inv
    conc = np.maximum(conc, 0.0)
    return StainChannels(hematoxylin=conc[..., 0], eosin=conc[..., 1])


def gray_channel(pixels: np.ndarray) -> np.ndarray:
    """Luminance on [0, 1] from 8-bit RGB."""
    return np.asarray(pixels, dtype=np.float64) @ GRAY_WEIGHTS / 255.0
