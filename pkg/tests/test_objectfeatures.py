"""Per-object shape, intensity, and secondary-object measurements."""

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from morphoml.errors import DataError, ValidationError
from morphoml.objectfeatures import (
    KIND_COLUMNS,
    NUCLEUS_CHANNELS,
    OBJECT_KINDS,
    extract_object_tables,
    validate_label_mask,
)
from morphoml.objectfeatures.intensity import (
    INTENSITY_STAT_NAMES,
    intensity_feature_table,
)
from morphoml.objectfeatures.secondary import derive_secondary_objects
from morphoml.objectfeatures.shape import (
    ARCH_FEATURE_NAMES,
    SHAPE_FEATURE_NAMES,
    arch_feature_table,
    shape_feature_table,
)
from morphoml.synth import rasterize_ellipse

_COL = {name: i for i, name in enumerate(SHAPE_FEATURE_NAMES)}
_ARCH = {name: i for i, name in enumerate(ARCH_FEATURE_NAMES)}
_STAT = {name: i for i, name in enumerate(INTENSITY_STAT_NAMES)}


def _single(mask):
    ids, rows = shape_feature_table(np.asarray(mask, dtype=np.int64))
    assert list(ids) == [1]
    return rows[0]


def test_rectangle_exact_values():
    mask = np.zeros((9, 13), dtype=np.int64)
    mask[3:6, 2:9] = 1  # 3 rows x 7 cols
    row = _single(mask)
    assert row[_COL["area"]] == 21.0
    assert row[_COL["bbox_area"]] == 21.0
    assert row[_COL["solidity"]] == pytest.approx(1.0)
    assert row[_COL["euler_number"]] == 1.0
    assert row[_COL["orientation"]] == pytest.approx(0.0, abs=1e-9)  # long axis along x
    assert row[_COL["equivalent_diameter"]] == pytest.approx(2 * math.sqrt(21 / math.pi))
    assert row[_COL["major_axis_length"]] > row[_COL["minor_axis_length"]] > 0
    tall = np.zeros((13, 9), dtype=np.int64)
    tall[2:9, 3:6] = 1
    assert _single(tall)[_COL["orientation"]] == pytest.approx(90.0, abs=1e-9)


def test_single_pixel_and_donut():
    mask = np.zeros((5, 5), dtype=np.int64)
    mask[2, 2] = 1
    row = _single(mask)
    assert row[_COL["area"]] == 1.0
    assert row[_COL["max_radius"]] >= 0.0
    donut = np.zeros((9, 9), dtype=np.int64)
    donut[1:8, 1:8] = 1
    donut[3:6, 3:6] = 0
    assert _single(donut)[_COL["euler_number"]] == 0.0  # one object, one hole


def test_form_factor_compactness_product_is_one():
    rng = np.random.default_rng(12)
    for _ in range(5):
        b = rng.uniform(8, 14)
        a = b * rng.uniform(1.0, 1.5)
        mask = rasterize_ellipse((48, 48), 24, 24, a, b, rng.uniform(0, 180))
        row = _single(mask)
        assert row[_COL["form_factor"]] * row[_COL["compactness"]] == pytest.approx(1.0)


def test_moment_invariances_under_grid_motions():
    rng = np.random.default_rng(8)
    mask = rasterize_ellipse((40, 40), 19.3, 20.2, 11.0, 7.0, 33.0).astype(np.int64)
    base = _single(mask)
    shifted = np.zeros((52, 57), dtype=np.int64)
    shifted[7:47, 9:49] = mask
    moved = _single(shifted)
    # every shape scalar is translation invariant (arch features are not)
    np.testing.assert_allclose(moved, base, atol=1e-9)
    rotated = _single(np.rot90(mask).copy())
    for i in range(7):
        assert rotated[_COL[f"hu_moment_{i}"]] == pytest.approx(
            base[_COL[f"hu_moment_{i}"]], abs=1e-12
        )
    for name in (f"zernike_{n}_{m}" for n, m in [(0, 0), (2, 0), (2, 2), (4, 2), (5, 3)]):
        assert rotated[_COL[name]] == pytest.approx(base[_COL[name]], abs=1e-9)
    assert rotated[_COL["area"]] == base[_COL["area"]]
    assert rotated[_COL["max_feret_diameter"]] == pytest.approx(
        base[_COL["max_feret_diameter"]], abs=1e-9
    )


def test_ellipse_field_oracle_axes_two_percent():
    rng = np.random.default_rng(31)
    worst_major = worst_minor = 0.0
    for _ in range(50):
        b = max(rng.normal(16.0, 3.0), 9.0)
        a = b * rng.uniform(1.1, 1.6)
        theta = rng.uniform(0, 180)
        pad = int(math.ceil(a)) + 4
        side = 2 * pad + 1
        cy = pad + rng.uniform(-0.5, 0.5)
        cx = pad + rng.uniform(-0.5, 0.5)
        row = _single(rasterize_ellipse((side, side), cy, cx, a, b, theta))
        worst_major = max(worst_major, abs(row[_COL["major_axis_length"]] / (2 * a) - 1))
        worst_minor = max(worst_minor, abs(row[_COL["minor_axis_length"]] / (2 * b) - 1))
    assert worst_major < 0.02 and worst_minor < 0.02


def test_multi_object_table_matches_per_object_masks():
    labels = np.zeros((40, 60), dtype=np.int64)
    labels[rasterize_ellipse((40, 60), 12, 14, 8, 6, 10)] = 1
    labels[rasterize_ellipse((40, 60), 26, 44, 9, 5, 120)] = 2
    ids, rows = shape_feature_table(labels)
    assert list(ids) == [1, 2]
    for obj_id in ids:
        solo = _single(labels == obj_id)
        np.testing.assert_allclose(rows[obj_id - 1], solo, atol=1e-9)


def test_arch_features_report_position():
    labels = np.zeros((30, 30), dtype=np.int64)
    labels[4:8, 10:16] = 1  # rows 4..7, cols 10..15
    ids, rows = arch_feature_table(labels)
    assert list(ids) == [1]
    row = rows[0]
    assert row[_ARCH["bbox_min_x"]] == 10.0 and row[_ARCH["bbox_max_x"]] == 15.0
    assert row[_ARCH["bbox_min_y"]] == 4.0 and row[_ARCH["bbox_max_y"]] == 7.0
    assert row[_ARCH["center_x"]] == pytest.approx(12.5)
    assert row[_ARCH["center_y"]] == pytest.approx(5.5)
    assert row[_ARCH["spatial_moment_0_0"]] == 24.0
    assert row[_ARCH["spatial_moment_1_0"]] == pytest.approx(24 * 12.5)
    assert row[_ARCH["spatial_moment_0_1"]] == pytest.approx(24 * 5.5)
    assert row[_ARCH["central_moment_1_1"]] == pytest.approx(0.0, abs=1e-9)


def test_intensity_stats_match_numpy():
    rng = np.random.default_rng(77)
    labels = np.zeros((30, 30), dtype=np.int64)
    blob = rasterize_ellipse((30, 30), 15, 15, 9, 6, 40)
    labels[blob] = 1
    channel = rng.uniform(0, 1, size=(30, 30))
    ids, rows = intensity_feature_table(labels, channel)
    assert ids == [1]
    row = rows[0]
    values = channel[blob]
    eroded = ndimage.binary_erosion(blob, structure=np.ones((3, 3)), border_value=0)
    edge_values = channel[blob & ~eroded]
    med = np.median(values)
    expected = {
        "integrated": values.sum(),
        "integrated_edge": edge_values.sum(),
        "mean": values.mean(),
        "mean_edge": edge_values.mean(),
        "median": med,
        "min": values.min(),
        "min_edge": edge_values.min(),
        "max": values.max(),
        "max_edge": edge_values.max(),
        "std": values.std(),
        "std_edge": edge_values.std(),
        "mad": np.median(np.abs(values - med)),
        "lower_quartile": np.percentile(values, 25),
        "upper_quartile": np.percentile(values, 75),
    }
    for name, want in expected.items():
        assert row[_STAT[name]] == pytest.approx(want, abs=1e-12), name
    ys, xs = np.nonzero(blob)
    total = values.sum()
    wx = (xs * values).sum() / total
    wy = (ys * values).sum() / total
    displacement = math.hypot(wx - xs.mean(), wy - ys.mean())
    assert row[_STAT["mass_displacement"]] == pytest.approx(displacement, abs=1e-12)


def test_intensity_constant_channel_has_zero_displacement():
    labels = np.zeros((12, 12), dtype=np.int64)
    labels[3:9, 3:9] = 1
    _, rows = intensity_feature_table(labels, np.full((12, 12), 0.4))
    row = rows[0]
    assert row[_STAT["mass_displacement"]] == pytest.approx(0.0, abs=1e-12)
    assert row[_STAT["std"]] == pytest.approx(0.0, abs=1e-12)
    assert row[_STAT["mean"]] == pytest.approx(0.4)
    assert row[_STAT["integrated"]] == pytest.approx(0.4 * 36)


def test_intensity_shape_mismatch():
    with pytest.raises(DataError):
        intensity_feature_table(np.ones((4, 4), dtype=np.int64), np.zeros((5, 5)))


def test_derive_secondary_objects_ring_geometry():
    nuclei = np.zeros((41, 41), dtype=np.int64)
    nuclei[rasterize_ellipse((41, 41), 20, 20, 6, 6, 0)] = 1
    cells, cytoplasm = derive_secondary_objects(nuclei, expansion_px=5)
    assert set(np.unique(cells)) == {0, 1}
    # cell = nucleus plus all background within 5 px of it
    dist = ndimage.distance_transform_edt(nuclei == 0)
    np.testing.assert_array_equal(cells > 0, (nuclei > 0) | (dist <= 5))
    np.testing.assert_array_equal(cytoplasm > 0, (cells > 0) & (nuclei == 0))
    # cytoplasm keeps the nucleus id
    assert set(np.unique(cytoplasm)) == {0, 1}


def test_derive_secondary_objects_split_between_neighbors():
    nuclei = np.zeros((20, 30), dtype=np.int64)
    nuclei[9:12, 5:8] = 1
    nuclei[9:12, 22:25] = 2
    cells, _ = derive_secondary_objects(nuclei, expansion_px=50)
    # every pixel is claimed by the nearer nucleus
    assert cells[10, 10] == 1 and cells[10, 20] == 2
    assert (cells > 0).all()
    with pytest.raises(ValidationError):
        derive_secondary_objects(nuclei, expansion_px=-1)


def test_derive_secondary_objects_zero_expansion():
    nuclei = np.zeros((10, 10), dtype=np.int64)
    nuclei[2:5, 2:5] = 1
    cells, cytoplasm = derive_secondary_objects(nuclei, expansion_px=0)
    np.testing.assert_array_equal(cells, nuclei)
    assert (cytoplasm == 0).all()


def test_validate_label_mask_repairs_fragments():
    labels = np.zeros((8, 8), dtype=np.int64)
    labels[1:3, 1:3] = 1
    labels[5:7, 5:7] = 1  # second component of id 1
    labels[1:3, 5:7] = 2
    fixed, repairs = validate_label_mask(labels)
    assert repairs == [(1, 3)]
    assert set(np.unique(fixed)) == {0, 1, 2, 3}
    # first component in row-major order keeps the id
    assert fixed[1, 1] == 1 and fixed[5, 5] == 3
    with pytest.raises(DataError):
        validate_label_mask(labels, repair=False)
    # untouched masks come back unchanged (no copy marker: same content)
    clean, none_needed = validate_label_mask(fixed)
    assert none_needed == []
    np.testing.assert_array_equal(clean, fixed)


def test_validate_label_mask_rejects_bad_inputs():
    with pytest.raises(DataError):
        validate_label_mask(np.zeros((3, 3, 3), dtype=np.int64))
    bad = np.zeros((3, 3), dtype=np.int64)
    bad[0, 0] = -2
    with pytest.raises(DataError):
        validate_label_mask(bad)


def test_diagonal_touch_is_eight_connected():
    labels = np.zeros((6, 6), dtype=np.int64)
    labels[1, 1] = 1
    labels[2, 2] = 1  # diagonal neighbor: still one 8-connected component
    _, repairs = validate_label_mask(labels)
    assert repairs == []


def _channels(shape, rng):
    return {
        "hematoxylin": rng.uniform(0, 1, size=shape),
        "eosin": rng.uniform(0, 1, size=shape),
        "gray": rng.uniform(0, 1, size=shape),
    }


def test_extract_object_tables_schema_and_ratios():
    rng = np.random.default_rng(5)
    nuclei = np.zeros((50, 50), dtype=np.int64)
    nuclei[rasterize_ellipse((50, 50), 15, 15, 7, 5, 20)] = 1
    nuclei[rasterize_ellipse((50, 50), 35, 35, 6, 4, 100)] = 2
    tables = extract_object_tables(nuclei, _channels((50, 50), rng), expansion_px=6)
    assert set(tables) == set(OBJECT_KINDS)
    for kind in OBJECT_KINDS:
        assert list(tables[kind].columns) == list(KIND_COLUMNS[kind])
        assert list(tables[kind].index) == [1, 2]
    ratios = tables["cytoplasm"]["nucleus_cell_area_ratio"]
    assert ((ratios > 0) & (ratios <= 1)).all()
    # nucleus area over cell area, directly checkable
    cells, _ = derive_secondary_objects(nuclei, 6)
    want = (nuclei == 1).sum() / (cells == 1).sum()
    assert ratios.loc[1] == pytest.approx(want)


def test_extract_object_tables_input_validation():
    rng = np.random.default_rng(5)
    nuclei = np.zeros((10, 10), dtype=np.int64)
    nuclei[2:5, 2:5] = 1
    channels = _channels((10, 10), rng)
    del channels["gray"]
    with pytest.raises(DataError):
        extract_object_tables(nuclei, channels)
    bad = _channels((9, 10), rng)
    with pytest.raises(DataError):
        extract_object_tables(nuclei, bad)


def test_extract_object_tables_empty_mask():
    rng = np.random.default_rng(5)
    tables = extract_object_tables(np.zeros((12, 12), dtype=np.int64), _channels((12, 12), rng))
    for kind in OBJECT_KINDS:
        assert len(tables[kind]) == 0
        assert list(tables[kind].columns) == list(KIND_COLUMNS[kind])


@settings(max_examples=25, deadline=None)
@given(
    h=st.integers(min_value=2, max_value=10),
    w=st.integers(min_value=2, max_value=10),
    oy=st.integers(min_value=0, max_value=15),
    ox=st.integers(min_value=0, max_value=15),
)
def test_rectangle_properties_hold_everywhere(h, w, oy, ox):
    mask = np.zeros((30, 30), dtype=np.int64)
    mask[oy:oy + h, ox:ox + w] = 1
    row = _single(mask)
    assert row[_COL["area"]] == h * w
    assert row[_COL["bbox_area"]] == h * w
    assert row[_COL["solidity"]] == pytest.approx(1.0)
    assert row[_COL["euler_number"]] == 1.0
    assert row[_COL["min_feret_diameter"]] <= row[_COL["max_feret_diameter"]] + 1e-12
    assert row[_COL["eccentricity"]] < 1.0
    ids, arch = arch_feature_table(mask)
    assert arch[0][_ARCH["center_x"]] == pytest.approx(ox + (w - 1) / 2)
    assert arch[0][_ARCH["center_y"]] == pytest.approx(oy + (h - 1) / 2)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_translation_invariance_random_blobs(seed):
    rng = np.random.default_rng(seed)
    blob = rng.random((7, 7)) > 0.45
    blob[3, 3] = True
    lab, _ = ndimage.label(blob, structure=np.ones((3, 3)))
    blob = lab == lab[3, 3]  # keep the central component only
    mask = np.zeros((24, 24), dtype=np.int64)
    mask[4:11, 4:11][blob] = 1
    shifted = np.zeros((24, 24), dtype=np.int64)
    shifted[10:17, 12:19][blob] = 1
    np.testing.assert_allclose(_single(mask), _single(shifted), atol=1e-9)
