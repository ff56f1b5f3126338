"""Clinical read-outs from segmentations: layer thickness, wound extent,
and the healing curve across imaging days.

A column counts as wound wherever it contains no epidermis pixel at all;
isolated short gaps are treated as segmentation dropouts and suppressed.
Wound area is a reproducible proxy: lateral wound width times the median
thickness of the surviving epidermis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabelMask
from .errors import ContractError, DegenerateInputError

NUM_CLASSES = 4
EPIDERMIS = 1
DEFAULT_MIN_GAP_PX = 3


@dataclass
class ThicknessProfile:
    """Per-column, per-class tissue thickness in micrometers.

    `per_column_um` has shape (4, width); `mean_um` / `std_um` are per-class
    statistics over the columns where the class is present, NaN when the
    class appears nowhere.
    """

    per_column_um: np.ndarray
    mean_um: tuple
    std_um: tuple


@dataclass
class WoundExtent:
    wound_columns: np.ndarray
    width_um: float
    area_um2: float


@dataclass
class HealingCurve:
    points: list  # (day, area_um2, closure_frac)


def layer_thickness(mask: LabelMask, axial_um_per_px: float) -> ThicknessProfile:
    """Column-wise pixel counts per class scaled to micrometers."""
    labels = mask.labels
    counts = np.stack([(labels == c).sum(axis=0) for c in range(NUM_CLASSES)])
    per_column = counts.astype(np.float64) * axial_um_per_px
    means = []
    stds = []
    for c in range(NUM_CLASSES):
        present = per_column[c] > 0
        if present.any():
            means.append(float(per_column[c][present].mean()))
            stds.append(float(per_column[c][present].std()))
        else:
            means.append(float("nan"))
            stds.append(float("nan"))
    return ThicknessProfile(per_column, tuple(means), tuple(stds))


def _suppress_short_runs(flags: np.ndarray, min_len: int) -> np.ndarray:
    """Clear True runs shorter than min_len."""
    out = flags.copy()
    n = len(flags)
    i = 0
    while i < n:
        if out[i]:
            j = i
            while j < n and out[j]:
                j += 1
            if j - i < min_len:
                out[i:j] = False
            i = j
        else:
            i += 1
    return out


def wound_extent(mask: LabelMask, spacing: tuple[float, float],
                 min_gap_px: int = DEFAULT_MIN_GAP_PX) -> WoundExtent:
    """Locate and size the wound (columns with zero epidermis pixels).

    spacing is (axial_um_per_px, lateral_um_per_px). Runs of wound columns
    shorter than min_gap_px are suppressed as noise. Area is wound width
    times the median epidermis thickness of the intact columns.
    """
    axial, lateral = spacing
    if axial <= 0 or lateral <= 0:
        raise ContractError("spacing must be positive")
    labels = mask.labels
    epi_counts = (labels == EPIDERMIS).sum(axis=0)
    raw_wound = epi_counts == 0
    wound = _suppress_short_runs(raw_wound, max(1, min_gap_px))
    n_wound = int(wound.sum())
    width_um = n_wound * lateral
    if n_wound == 0:
        return WoundExtent(wound, 0.0, 0.0)
    intact = epi_counts > 0
    if not intact.any():
        raise DegenerateInputError(
            "no intact epidermis column to reference; fall back to "
            "width-only comparison (area proxy undefined)"
        )
    median_thickness_um = float(np.median(epi_counts[intact])) * axial
    return WoundExtent(wound, width_um, width_um * median_thickness_um)


def healing_curve(series) -> HealingCurve:
    """Closure fraction per day relative to the day-0 wound area.

    `series` holds (day, WoundExtent) pairs. Day 0 must be present with a
    positive area; closure is clamped to [0, 1], so a wound that regresses
    past its baseline reads as 0 and full closure reads as 1.
    """
    items = sorted(series, key=lambda p: p[0])
    if not items:
        raise ContractError("empty healing series")
    days = [d for d, _ in items]
    if len(set(days)) != len(days):
        raise ContractError(f"duplicate days in series: {days}")
    if days[0] != 0:
        raise ContractError("healing series must include day 0")
    base_area = items[0][1].area_um2
    if base_area <= 0:
        raise ContractError("day-0 wound area must be positive")
    points = []
    for day, extent in items:
        closure = 1.0 - extent.area_um2 / base_area
        points.append((day, extent.area_um2, min(1.0, max(0.0, closure))))
    return HealingCurve(points)
