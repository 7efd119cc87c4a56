"""Patch-level feature vectors: per-object aggregation, Ripley's self-K,
feature-set registries, and IHC encoding.

Every base feature is collapsed with five statistics: mean, population
standard deviation, skew, excess kurtosis, and interquartile range
(linear-interpolated 75th minus 25th percentile). Skew and kurtosis of a
constant or single-object sample are defined as 0 so vectors stay NaN-free.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cohort import IHC_MISSING, IHC_VALUE_CODES
from .errors import DataError, ValidationError
from .objectfeatures import (
    ARCH_FEATURE_NAMES,
    KIND_COLUMNS,
    NUCLEUS_CHANNELS,
    RATIO_FEATURE_NAMES,
    SECONDARY_CHANNELS,
    SHAPE_FEATURE_NAMES,
    intensity_column_names,
)

AGGREGATOR_NAMES = ("mean", "std", "skew", "kurtosis", "iqr")

DEFAULT_CT_RADII = tuple(np.linspace(5.0, 50.0, 10))

# Feature blocks: (block name, object kind, base feature columns). The cell
# block mirrors the nuclear ones on the derived cell objects; positional
# (architectural) features are taken on nuclei and cells.
_NUCLEUS_INTENSITY = intensity_column_names(NUCLEUS_CHANNELS)
_SECONDARY_INTENSITY = intensity_column_names(SECONDARY_CHANNELS)

BLOCKS = {
    "nuclear_shape": (("nucleus", SHAPE_FEATURE_NAMES),),
    "nuclear_intensity": (("nucleus", _NUCLEUS_INTENSITY),),
    "cell": (("cell", SHAPE_FEATURE_NAMES + _SECONDARY_INTENSITY),),
    "cytoplasm": (
        ("cytoplasm", SHAPE_FEATURE_NAMES + _SECONDARY_INTENSITY + RATIO_FEATURE_NAMES),
    ),
    "arch": (("nucleus", ARCH_FEATURE_NAMES), ("cell", ARCH_FEATURE_NAMES)),
}

# Named configurations with their documented vector lengths (x5 aggregators):
#   NuclearMorphological              62 x 5            = 310
#   NuclearIntensity                  45 x 5            = 225
#   Cytoplasmic                       94 x 5            = 470
#   NuclearCytoplasmIntensityCPArch   (62+45+92+94+26)  = 1595
CONFIGS = {
    "NuclearMorphological": ("nuclear_shape",),
    "NuclearIntensity": ("nuclear_intensity",),
    "Cytoplasmic": ("cytoplasm",),
    "NuclearCytoplasmIntensityCPArch": (
        "nuclear_shape",
        "nuclear_intensity",
        "cell",
        "cytoplasm",
        "arch",
    ),
}

DEFAULT_CONFIG = "NuclearCytoplasmIntensityCPArch"


@dataclass(frozen=True)
class FeatureRegistry:
    """Ordered column schema for one feature configuration."""

    config: str
    columns: tuple
    blocks: tuple  # ((kind, base feature names), ...) in column order
    ct_radii: tuple = ()
    ihc_stains: tuple = ()

    def __len__(self):
        return len(self.columns)

    @property
    def categorical_columns(self):
        return tuple(f"ihc.{s}" for s in self.ihc_stains)

    def hash(self) -> str:
        payload = json.dumps(
            {
                "config": self.config,
                "columns": list(self.columns),
                "categorical": list(self.categorical_columns),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def build_registry(config: str = DEFAULT_CONFIG, ct_radii=(), ihc_stains=()) -> FeatureRegistry:
    if config not in CONFIGS:
        raise ValidationError(
            f"unknown feature configuration {config!r}; expected one of {sorted(CONFIGS)}"
        )
    ct_radii = tuple(float(r) for r in ct_radii)
    if any(r <= 0 for r in ct_radii):
        raise ValidationError("ct radii must be positive")
    if list(ct_radii) != sorted(set(ct_radii)):
        raise ValidationError("ct radii must be strictly increasing")
    ihc_stains = tuple(ihc_stains)

    block_specs = []
    columns = []
    for block_name in CONFIGS[config]:
        for kind, bases in BLOCKS[block_name]:
            block_specs.append((kind, bases))
            for base in bases:
                for agg in AGGREGATOR_NAMES:
                    columns.append(f"{kind}.{base}.{agg}")
    for r in ct_radii:
        columns.append(f"ct.k_r{r:g}")
    for stain in ihc_stains:
        columns.append(f"ihc.{stain}")
    return FeatureRegistry(config, tuple(columns), tuple(block_specs), ct_radii, ihc_stains)


def aggregate_values(values) -> np.ndarray:
    """(mean, population std, skew, excess kurtosis, iqr) of a 1-D sample."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    if n == 0:
        return np.zeros(5)
    mean = float(v.mean())
    d = v - mean
    m2 = float((d * d).mean())
    std = np.sqrt(m2)
    if n < 2 or m2 <= 0:
        skew = 0.0
        kurt = 0.0
    else:
        skew = float((d**3).mean()) / m2**1.5
        kurt = float((d**4).mean()) / m2**2 - 3.0
    iqr = float(np.percentile(v, 75) - np.percentile(v, 25))
    return np.array([mean, std, skew, kurt, iqr])


def aggregate_patch(table, feature_names=None) -> np.ndarray:
    """Collapse a per-object feature table to its 5-statistic patch vector.

    Column order: for each base feature, the 5 aggregators. An empty table
    yields the all-zero default vector and a warning.
    """
    if feature_names is None:
        feature_names = list(table.columns)
    out = np.zeros(5 * len(feature_names))
    if len(table) == 0:
        warnings.warn("aggregate_patch: no objects in patch, emitting defaults")
        return out
    for i, name in enumerate(feature_names):
        out[5 * i:5 * i + 5] = aggregate_values(table[name].to_numpy())
    return out


def ripley_self_k(centroids, radii, region_area) -> np.ndarray:
    """Uncorrected Ripley self-K at the given radii.

    K(r) = area / (n (n-1)) * number of ordered pairs within distance r.
    Fewer than 2 centroids yields zeros with a warning.
    """
    radii = np.asarray(radii, dtype=np.float64)
    if radii.size and (np.any(np.diff(radii) <= 0) or radii[0] <= 0):
        raise ValidationError("radii must be strictly increasing and positive")
    pts = np.asarray(centroids, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n < 2:
        warnings.warn("ripley_self_k: fewer than 2 centroids, returning zeros")
        return np.zeros(len(radii))
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    iu = ~np.eye(n, dtype=bool)
    pair_dists = dist[iu]
    scale = float(region_area) / (n * (n - 1))
    return np.array([scale * np.count_nonzero(pair_dists <= r) for r in radii])


def encode_ihc(panel: dict, stain_list) -> np.ndarray:
    """Ordinal codes for each stain in stain_list order; absent stains are
    Missing. Accepts either already-encoded ints or pos/neg/ci/'' strings."""
    out = np.full(len(stain_list), float(IHC_MISSING))
    for i, stain in enumerate(stain_list):
        if stain not in panel:
            continue
        value = panel[stain]
        if isinstance(value, str):
            if value not in IHC_VALUE_CODES:
                raise DataError(f"bad IHC value {value!r} for stain {stain}")
            value = IHC_VALUE_CODES[value]
        if value not in (0, 1, 2, 3):
            raise DataError(f"bad IHC code {value!r} for stain {stain}")
        out[i] = float(value)
    return out


def assemble_features(
    registry: FeatureRegistry,
    tables: dict,
    centroids=None,
    region_area: float = 0.0,
    ihc_panel=None,
) -> np.ndarray:
    """Concatenate the registry's blocks into one patch vector.

    tables: {kind: per-object DataFrame} from objectfeatures.
    centroids/region_area feed the CT block when the registry has radii.
    ihc_panel: stain -> score for the registry's stain list.
    """
    parts = []
    for kind, bases in registry.blocks:
        if kind not in tables:
            raise DataError(f"configuration {registry.config} needs {kind} objects")
        parts.append(aggregate_patch(tables[kind], list(bases)))
    if registry.ct_radii:
        if centroids is None:
            raise DataError("registry has CT radii but no centroids were given")
        parts.append(ripley_self_k(centroids, registry.ct_radii, region_area))
    if registry.ihc_stains:
        parts.append(encode_ihc(ihc_panel or {}, registry.ihc_stains))
    vector = np.concatenate(parts) if parts else np.zeros(0)
    if len(vector) != len(registry.columns):
        raise DataError(
            f"assembled {len(vector)} values but registry {registry.config} "
            f"declares {len(registry.columns)}"
        )
    return vector
