"""Grid patch extraction, background filtering, and probability stitching.

Patches are laid out on a stride grid with the final row/column offset
clamped so the last patch ends exactly at the image border. Stitching is
the inverse: overlapping per-patch class probabilities are averaged by
coverage count, which matches the probability-averaging semantics used by
the model ensemble.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import LabelMask, OctImage
from .errors import ContractError, CoverageError, ParameterError

DEFAULT_PATCH_PX = 128
DEFAULT_STRIDE_PX = 64


@dataclass(frozen=True)
class PatchGeometry:
    """Placement of one square patch inside its source raster."""

    source_id: str
    row0: int
    col0: int
    patch_px: int

    def __post_init__(self):
        if self.row0 < 0 or self.col0 < 0:
            raise ParameterError("patch corner must be non-negative")
        if self.patch_px < 1:
            raise ParameterError("patch_px must be positive")


@dataclass
class PatchSet:
    """Square patches plus the grid parameters that produced them.

    Each element of `patches` is (image_patch, mask_patch_or_None, geometry).
    """

    patches: list = field(default_factory=list)
    patch_px: int = DEFAULT_PATCH_PX
    stride_px: int = DEFAULT_STRIDE_PX

    def __len__(self) -> int:
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)


def grid_offsets(extent: int, patch_px: int, stride_px: int) -> list[int]:
    """Start offsets along one axis: 0, S, 2S, ... with the last clamped.

    The count is ceil((extent - patch)/stride) + 1; only the final offset
    can be clamped, so offsets are strictly increasing.
    """
    n = math.ceil((extent - patch_px) / stride_px) + 1
    return [min(i * stride_px, extent - patch_px) for i in range(n)]


def extract_patches(img: OctImage, mask: LabelMask | None,
                    patch_px: int = DEFAULT_PATCH_PX,
                    stride_px: int = DEFAULT_STRIDE_PX) -> PatchSet:
    """Cut a full B-scan (and optional mask) into an overlapping patch grid."""
    h, w = img.pixels.shape
    if patch_px > min(h, w):
        raise ParameterError(f"patch_px {patch_px} exceeds image extent {h}x{w}")
    if not (1 <= stride_px <= patch_px):
        raise ParameterError(f"stride_px must lie in [1, patch_px], got {stride_px}")
    if mask is not None and mask.shape != (h, w):
        raise ContractError(f"mask shape {mask.shape} does not match image {h}x{w}")
    patches = []
    for r0 in grid_offsets(h, patch_px, stride_px):
        for c0 in grid_offsets(w, patch_px, stride_px):
            geom = PatchGeometry(img.subject_id, r0, c0, patch_px)
            tile = img.pixels[r0:r0 + patch_px, c0:c0 + patch_px].copy()
            mtile = None
            if mask is not None:
                mtile = mask.labels[r0:r0 + patch_px, c0:c0 + patch_px].copy()
            patches.append((tile, mtile, geom))
    return PatchSet(patches, patch_px, stride_px)


def filter_background(ps: PatchSet, min_unique: int = 2) -> PatchSet:
    """Keep patches whose mask holds at least `min_unique` distinct class ids."""
    kept = []
    for tile, mtile, geom in ps:
        if mtile is None:
            raise ContractError(f"patch at ({geom.row0},{geom.col0}) has no mask")
        if len(np.unique(mtile)) >= min_unique:
            kept.append((tile, mtile, geom))
    return PatchSet(kept, ps.patch_px, ps.stride_px)


def stitch(prob_patches, out_shape: tuple[int, int]):
    """Reassemble per-patch class probabilities into one full-frame map.

    Overlaps are combined by coverage-weighted arithmetic mean; accumulation
    order is the given patch order, so results are deterministic. Pixels
    with drifted channel sums are renormalized; pixels no patch covers are
    an error.
    """
    from .segnet import NUM_CLASSES, ProbabilityMap

    h, w = out_shape
    acc = np.zeros((NUM_CLASSES, h, w), dtype=np.float64)
    cover = np.zeros((h, w), dtype=np.int64)
    for probs, geom in prob_patches:
        arr = np.asarray(getattr(probs, "probs", probs), dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != NUM_CLASSES:
            raise ContractError(f"probability patch must be ({NUM_CLASSES},P,P), got {arr.shape}")
        r0, c0 = geom.row0, geom.col0
        ph, pw = arr.shape[1:]
        if r0 + ph > h or c0 + pw > w:
            raise ContractError(
                f"patch at ({r0},{c0}) size {ph}x{pw} overruns output {h}x{w}"
            )
        acc[:, r0:r0 + ph, c0:c0 + pw] += arr
        cover[r0:r0 + ph, c0:c0 + pw] += 1
    if (cover == 0).any():
        r, c = np.argwhere(cover == 0)[0]
        raise CoverageError(f"pixel (row={r}, col={c}) is covered by no patch")
    mean = acc / cover
    sums = mean.sum(axis=0)
    off = np.abs(sums - 1.0) > 1e-6
    if off.any():
        mean = np.where(off[None, :, :], mean / sums[None, :, :], mean)
    return ProbabilityMap(mean)
