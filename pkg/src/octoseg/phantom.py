"""Synthetic layered-skin B-scan generator.

Produces image/mask pairs with a background margin on top of three tissue
bands (epidermis, dermis, subcutaneous), smooth boundary undulation,
multiplicative gamma speckle, and an optional wound where the epidermis is
absent and the exposed dermis is attenuated. Everything is a pure function
of the ``PhantomSpec``, seed included, so one spec value is a complete
recipe for a scan.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import LabelMask, OctImage
from .errors import ParameterError

BACKGROUND_INTENSITY = 0.06
WOUND_DERMIS_FACTOR = 0.6
DAY_STEP = 4


@dataclass(frozen=True)
class PhantomSpec:
    """Complete recipe for one synthetic B-scan."""

    height_px: int = 256
    width_px: int = 512
    layer_mean_thickness_px: tuple = (26.0, 72.0, 110.0)
    boundary_wobble_px: float = 6.0
    layer_mean_intensity: tuple = (0.82, 0.58, 0.38)
    speckle_shape: float = 4.0
    wound_center_frac: float = 0.5
    wound_halfwidth_frac: float = 0.0
    seed: int = 0
    top_margin_px: int = 24

    def __post_init__(self):
        if self.height_px <= 0 or self.width_px <= 0:
            raise ParameterError("phantom dimensions must be positive")
        if len(self.layer_mean_thickness_px) != 3 or any(t <= 0 for t in self.layer_mean_thickness_px):
            raise ParameterError("layer_mean_thickness_px must be three positive values")
        if len(self.layer_mean_intensity) != 3 or any(not (0.0 < v <= 1.0) for v in self.layer_mean_intensity):
            raise ParameterError("layer_mean_intensity must be three values in (0, 1]")
        if self.boundary_wobble_px < 0:
            raise ParameterError("boundary_wobble_px must be non-negative")
        if self.speckle_shape <= 0:
            raise ParameterError("speckle_shape must be positive")
        for name in ("wound_center_frac", "wound_halfwidth_frac"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ParameterError(f"{name} must lie in [0, 1]")
        if self.top_margin_px < 1:
            raise ParameterError("top_margin_px must be at least 1")
        if sum(self.layer_mean_thickness_px) + self.top_margin_px > self.height_px:
            raise ParameterError(
                "layer thicknesses plus top margin exceed the phantom height"
            )


def wound_span(spec: PhantomSpec) -> tuple[int, int]:
    """Column range [lo, hi) that the wound occupies; empty when halfwidth 0."""
    lo = round((spec.wound_center_frac - spec.wound_halfwidth_frac) * spec.width_px)
    hi = round((spec.wound_center_frac + spec.wound_halfwidth_frac) * spec.width_px)
    return max(0, lo), min(spec.width_px, hi)


def _boundaries(spec: PhantomSpec) -> np.ndarray:
    """Per-column depths of the three layer-top transitions, shape (3, W).

    Row k holds the first image row of layer k+1, so columns read
    background < b[0] <= epidermis < b[1] <= dermis < b[2] <= subcutaneous.
    Undulation is a two-sinusoid sum per interface riding on the cumulative
    depth, clamped so each band keeps at least one pixel everywhere.
    """
    rng = np.random.default_rng(spec.seed)
    x = np.arange(spec.width_px) / spec.width_px
    amp = spec.boundary_wobble_px
    depth = np.full(spec.width_px, float(spec.top_margin_px))
    rows = []
    thicknesses = (0.0,) + tuple(spec.layer_mean_thickness_px[:2])
    for t in thicknesses:
        f1 = rng.uniform(1.5, 3.0)
        f2 = rng.uniform(4.0, 7.0)
        p1 = rng.uniform(0.0, 2.0 * np.pi)
        p2 = rng.uniform(0.0, 2.0 * np.pi)
        wobble = 0.6 * amp * np.sin(2 * np.pi * f1 * x + p1) + 0.4 * amp * np.sin(2 * np.pi * f2 * x + p2)
        depth = depth + t + wobble
        rows.append(np.round(depth))
    h = spec.height_px
    b0 = np.clip(rows[0], 1, h - 3).astype(np.int64)
    b1 = np.clip(rows[1], b0 + 1, h - 2).astype(np.int64)
    b2 = np.clip(rows[2], b1 + 1, h - 1).astype(np.int64)
    return np.stack([b0, b1, b2])


def _generate(spec: PhantomSpec, speckle_seed: int) -> tuple[OctImage, LabelMask]:
    b = _boundaries(spec)
    depth = np.arange(spec.height_px)[:, None]
    mask = (depth >= b[0]).astype(np.uint8) + (depth >= b[1]) + (depth >= b[2])

    lo, hi = wound_span(spec)
    wound_cols = np.zeros(spec.width_px, dtype=bool)
    wound_cols[lo:hi] = True
    mask[(mask == 1) & wound_cols[None, :]] = 0

    means = np.array([BACKGROUND_INTENSITY, *spec.layer_mean_intensity])
    clean = means[mask]
    clean[(mask == 2) & wound_cols[None, :]] *= WOUND_DERMIS_FACTOR

    noise_rng = np.random.default_rng(speckle_seed)
    speckle = noise_rng.gamma(spec.speckle_shape, 1.0 / spec.speckle_shape, clean.shape)
    pixels = np.clip(clean * speckle, 0.0, 1.0)

    img = OctImage(pixels, subject_id=f"phantom{spec.seed}")
    return img, LabelMask(mask)


def generate_phantom(spec: PhantomSpec) -> tuple[OctImage, LabelMask]:
    """Render one phantom; identical spec gives bit-identical output."""
    return _generate(spec, spec.seed)


def generate_healing_series(base: PhantomSpec, halfwidths) -> list:
    """Render one phantom per halfwidth as a time series of the same subject.

    All entries share the base spec's geometry (same seed drives the layer
    boundaries) while speckle is drawn fresh per time point from
    ``base.seed + index``. Days are assigned 0, 4, 8, ... in order. Returns
    a list of (OctImage, LabelMask, day) triples.
    """
    for h in halfwidths:
        if h < 0:
            raise ParameterError(f"halfwidth {h} is negative")
    series = []
    for i, h in enumerate(halfwidths):
        spec_i = replace(base, wound_halfwidth_frac=float(h))
        img, mask = _generate(spec_i, base.seed + i)
        day = DAY_STEP * i
        img = OctImage(img.pixels, img.axial_um_per_px, img.lateral_um_per_px,
                       img.subject_id, day)
        series.append((img, mask, day))
    return series
