"""Thickness profiles, wound extent, and healing curves."""

import math

import numpy as np
import pytest

from octoseg.data import LabelMask
from octoseg.errors import ContractError, DegenerateInputError
from octoseg.phantom import PhantomSpec, _boundaries, generate_healing_series, generate_phantom
from octoseg.quantify import (
    HealingCurve,
    WoundExtent,
    healing_curve,
    layer_thickness,
    wound_extent,
)


def banded_mask(h=40, w=30, epi_rows=(5, 15), dermis_end=30):
    labels = np.zeros((h, w), dtype=np.uint8)
    labels[epi_rows[0]:epi_rows[1]] = 1
    labels[epi_rows[1]:dermis_end] = 2
    labels[dermis_end:] = 3
    return LabelMask(labels)


def test_uniform_band_thickness():
    profile = layer_thickness(banded_mask(), axial_um_per_px=10.0)
    assert np.all(profile.per_column_um[1] == 100.0)
    assert profile.mean_um[1] == 100.0
    assert profile.std_um[1] == 0.0


def test_absent_class_is_nan():
    labels = np.zeros((10, 10), dtype=np.uint8)
    labels[5:] = 2
    profile = layer_thickness(LabelMask(labels), 10.0)
    assert np.all(profile.per_column_um[1] == 0.0)
    assert math.isnan(profile.mean_um[1])
    assert math.isnan(profile.std_um[3])


def test_phantom_geometry_is_the_oracle():
    spec = PhantomSpec(seed=17)
    _, mask = generate_phantom(spec)
    b = _boundaries(spec)
    profile = layer_thickness(mask, 10.0)
    assert np.array_equal(profile.per_column_um[1], (b[1] - b[0]) * 10.0)
    assert np.array_equal(profile.per_column_um[2], (b[2] - b[1]) * 10.0)
    assert np.array_equal(profile.per_column_um[0], b[0] * 10.0)


def test_thickness_mirror_symmetry():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, (20, 31))
    fwd = layer_thickness(LabelMask(labels), 10.0)
    rev = layer_thickness(LabelMask(labels[:, ::-1]), 10.0)
    assert np.array_equal(fwd.per_column_um[:, ::-1], rev.per_column_um)
    assert fwd.mean_um == rev.mean_um


def test_no_wound_zero_extent():
    ext = wound_extent(banded_mask(), (10.0, 25.0))
    assert ext.width_um == 0.0 and ext.area_um2 == 0.0
    assert not ext.wound_columns.any()


def test_wound_width_middle_half():
    spec = PhantomSpec(height_px=128, width_px=200,
                       layer_mean_thickness_px=(14.0, 36.0, 50.0),
                       top_margin_px=12, boundary_wobble_px=2.0,
                       wound_center_frac=0.5, wound_halfwidth_frac=0.25, seed=1)
    _, mask = generate_phantom(spec)
    ext = wound_extent(mask, (10.0, 25.0))
    assert int(ext.wound_columns.sum()) == 100
    assert ext.width_um == pytest.approx(2500.0)
    epi_rows = (mask.labels == 1).sum(axis=0)
    median_px = np.median(epi_rows[epi_rows > 0])
    assert ext.area_um2 == pytest.approx(2500.0 * median_px * 10.0)


def test_single_column_gap_suppressed():
    mask = banded_mask(w=30)
    labels = mask.labels.copy()
    labels[:, 7][labels[:, 7] == 1] = 0
    ext = wound_extent(LabelMask(labels), (10.0, 25.0), min_gap_px=3)
    assert ext.width_um == 0.0
    assert not ext.wound_columns.any()


def test_wide_gap_survives_suppression():
    mask = banded_mask(w=30)
    labels = mask.labels.copy()
    for col in (10, 11, 12):
        labels[:, col][labels[:, col] == 1] = 0
    ext = wound_extent(LabelMask(labels), (10.0, 25.0), min_gap_px=3)
    assert int(ext.wound_columns.sum()) == 3
    assert ext.width_um == 75.0


def test_width_monotone_as_epidermis_regrows():
    mask = banded_mask(w=40)
    labels = mask.labels.copy()
    for col in range(10, 25):
        labels[:, col][labels[:, col] == 1] = 0
    widths = []
    for regrow in range(0, 15, 3):
        cur = labels.copy()
        for col in range(10, 10 + regrow):
            cur[5:15, col] = 1
        widths.append(wound_extent(LabelMask(cur), (10.0, 25.0)).width_um)
    assert widths == sorted(widths, reverse=True)


def test_no_intact_epidermis_is_degenerate():
    labels = np.zeros((10, 20), dtype=np.uint8)
    labels[5:] = 2
    with pytest.raises(DegenerateInputError):
        wound_extent(LabelMask(labels), (10.0, 25.0))


def test_healing_curve_constant_area():
    ext = WoundExtent(np.ones(4, dtype=bool), 100.0, 500.0)
    curve = healing_curve([(0, ext), (4, ext), (8, ext)])
    assert [c for _, _, c in curve.points] == [0.0, 0.0, 0.0]


def test_healing_curve_98_percent():
    base = WoundExtent(np.ones(4, dtype=bool), 100.0, 1000.0)
    late = WoundExtent(np.ones(4, dtype=bool), 2.0, 18.0)
    curve = healing_curve([(0, base), (12, late)])
    day12 = curve.points[-1]
    assert day12[0] == 12
    assert day12[2] == pytest.approx(0.982)
    assert day12[2] >= 0.98


def test_healing_curve_day0_required():
    ext = WoundExtent(np.ones(2, dtype=bool), 10.0, 100.0)
    with pytest.raises(ContractError):
        healing_curve([(4, ext), (8, ext)])
    with pytest.raises(ContractError):
        healing_curve([(0, WoundExtent(np.zeros(2, dtype=bool), 0.0, 0.0)), (4, ext)])
    with pytest.raises(ContractError):
        healing_curve([])
    with pytest.raises(ContractError):
        healing_curve([(0, ext), (0, ext)])


def test_healing_curve_day0_is_zero_and_sorted():
    a = WoundExtent(np.ones(2, dtype=bool), 10.0, 100.0)
    b = WoundExtent(np.ones(2, dtype=bool), 8.0, 60.0)
    curve = healing_curve([(8, b), (0, a)])
    assert [d for d, _, _ in curve.points] == [0, 8]
    assert curve.points[0][2] == 0.0
    assert curve.points[1][2] == pytest.approx(0.4)


def test_healing_curve_clamped():
    base = WoundExtent(np.ones(2, dtype=bool), 10.0, 100.0)
    grown = WoundExtent(np.ones(2, dtype=bool), 20.0, 250.0)
    curve = healing_curve([(0, base), (4, grown)])
    assert curve.points[1][2] == 0.0


def test_ground_truth_series_closure_fractions():
    base = PhantomSpec(seed=33, wound_center_frac=0.5)
    series = generate_healing_series(base, [0.3, 0.285, 0.12, 0.006])
    extents = [(day, wound_extent(mask, (10.0, 25.0))) for _, mask, day in series]
    curve = healing_curve(extents)
    closures = [c for _, _, c in curve.points]
    targets = (0.0, 0.05, 0.60, 0.98)
    for got, want in zip(closures, targets):
        assert got == pytest.approx(want, abs=0.05)
