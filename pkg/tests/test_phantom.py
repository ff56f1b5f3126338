"""Phantom construction: geometry, wound placement, determinism, series."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octoseg.errors import ParameterError
from octoseg.phantom import (
    PhantomSpec,
    generate_healing_series,
    generate_phantom,
    wound_span,
)


def column_run_classes(mask, col):
    """Distinct class ids of one column in order of first appearance."""
    column = mask[:, col]
    keep = np.ones(len(column), dtype=bool)
    keep[1:] = column[1:] != column[:-1]
    return column[keep].tolist()


def test_no_wound_every_column_has_epidermis():
    _, mask = generate_phantom(PhantomSpec(seed=11))
    assert np.all((mask.labels == 1).any(axis=0))


def test_wound_middle_half_lacks_epidermis():
    spec = PhantomSpec(wound_center_frac=0.5, wound_halfwidth_frac=0.25, seed=3)
    _, mask = generate_phantom(spec)
    has_epi = (mask.labels == 1).any(axis=0)
    lo, hi = wound_span(spec)
    assert hi - lo == spec.width_px // 2
    assert not has_epi[lo:hi].any()
    assert has_epi[:lo].all() and has_epi[hi:].all()


def test_determinism():
    spec = PhantomSpec(seed=42, wound_halfwidth_frac=0.1)
    img_a, mask_a = generate_phantom(spec)
    img_b, mask_b = generate_phantom(spec)
    assert np.array_equal(img_a.pixels, img_b.pixels)
    assert np.array_equal(mask_a.labels, mask_b.labels)


def test_column_run_order_outside_wound():
    spec = PhantomSpec(seed=5, wound_center_frac=0.5, wound_halfwidth_frac=0.2)
    _, mask = generate_phantom(spec)
    lo, hi = wound_span(spec)
    for col in (0, lo - 1, hi, spec.width_px - 1):
        assert column_run_classes(mask.labels, col) == [0, 1, 2, 3]
    for col in (lo, (lo + hi) // 2, hi - 1):
        assert column_run_classes(mask.labels, col) == [0, 2, 3]


def test_wound_dermis_attenuated():
    base = PhantomSpec(seed=9, speckle_shape=4000.0)
    spec = PhantomSpec(seed=9, speckle_shape=4000.0,
                       wound_center_frac=0.5, wound_halfwidth_frac=0.25)
    img_clean, mask_clean = generate_phantom(base)
    img_wound, mask_wound = generate_phantom(spec)
    lo, hi = wound_span(spec)
    inside = (mask_wound.labels == 2) & (mask_clean.labels == 2)
    inside[:, :lo] = False
    inside[:, hi:] = False
    ratio = img_wound.pixels[inside] / img_clean.pixels[inside]
    assert ratio.mean() == pytest.approx(0.6, abs=0.01)


def test_intensity_range():
    img, _ = generate_phantom(PhantomSpec(seed=2, speckle_shape=0.5))
    assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0


def test_healing_series_width_ratios():
    base = PhantomSpec(seed=21)
    series = generate_healing_series(base, [0.3, 0.285, 0.12, 0.006])
    widths = []
    for _, mask, _ in series:
        widths.append(int((~(mask.labels == 1).any(axis=0)).sum()))
    ratios = [w / widths[0] for w in widths]
    assert ratios[0] == 1.0
    assert ratios[1] == pytest.approx(0.95, abs=0.005)
    assert ratios[2] == pytest.approx(0.40, abs=0.005)
    assert ratios[3] == pytest.approx(0.02, abs=0.005)


def test_healing_series_days_and_geometry():
    base = PhantomSpec(seed=8)
    series = generate_healing_series(base, [0.0, 0.0, 0.1])
    assert [day for _, _, day in series] == [0, 4, 8]
    assert [img.day for img, _, _ in series] == [0, 4, 8]
    # same geometry seed: the two no-wound masks are identical
    assert np.array_equal(series[0][1].labels, series[1][1].labels)
    # independent speckle per time point
    assert not np.array_equal(series[0][0].pixels, series[1][0].pixels)


def test_healing_series_empty():
    assert generate_healing_series(PhantomSpec(), []) == []


def test_healing_series_negative_halfwidth():
    with pytest.raises(ParameterError):
        generate_healing_series(PhantomSpec(), [0.1, -0.2])


def test_spec_invariants():
    with pytest.raises(ParameterError):
        PhantomSpec(height_px=100, layer_mean_thickness_px=(40, 40, 40))
    with pytest.raises(ParameterError):
        PhantomSpec(layer_mean_intensity=(0.5, 0.5, 1.5))
    with pytest.raises(ParameterError):
        PhantomSpec(boundary_wobble_px=-1)
    with pytest.raises(ParameterError):
        PhantomSpec(wound_halfwidth_frac=1.5)
    with pytest.raises(ParameterError):
        PhantomSpec(speckle_shape=0)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    wobble=st.floats(0.0, 10.0),
    halfwidth=st.floats(0.0, 0.45),
    center=st.floats(0.2, 0.8),
)
def test_run_order_property(seed, wobble, halfwidth, center):
    spec = PhantomSpec(height_px=96, width_px=128,
                       layer_mean_thickness_px=(12.0, 24.0, 30.0),
                       boundary_wobble_px=wobble,
                       wound_center_frac=center, wound_halfwidth_frac=halfwidth,
                       seed=seed)
    img, mask = generate_phantom(spec)
    assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0
    lo, hi = wound_span(spec)
    for col in range(0, spec.width_px, 17):
        runs = column_run_classes(mask.labels, col)
        if lo <= col < hi:
            assert runs == [0, 2, 3]
        else:
            assert runs == [0, 1, 2, 3]
