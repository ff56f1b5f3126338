"""Despeckling and intensity normalization."""

from __future__ import annotations

from scipy import ndimage

from .data import OctImage
from .errors import ParameterError


def median_filter(img: OctImage, kernel_px: int) -> OctImage:
    """Square median filter with edge-replicated borders.

    The replicate border policy keeps the top of the scan from darkening,
    which would otherwise bias the air/epidermis boundary.
    """
    _check_kernel(img, kernel_px)
    if kernel_px == 1:
        return img.with_pixels(img.pixels.copy())
    out = ndimage.median_filter(img.pixels, size=kernel_px, mode="nearest")
    return img.with_pixels(out)


def despeckle(img: OctImage, kernel_px: int = 3, passes: int = 1) -> OctImage:
    """Apply `passes` successive median filters (0 passes = identity)."""
    _check_kernel(img, kernel_px)
    if passes < 0:
        raise ParameterError("passes must be non-negative")
    out = img
    for _ in range(passes):
        out = median_filter(out, kernel_px)
    return out


def normalize(img: OctImage) -> OctImage:
    """Min-max rescale to [0, 1]; a constant image maps to all zeros."""
    lo = img.pixels.min()
    hi = img.pixels.max()
    if hi <= lo:
        return img.with_pixels(img.pixels * 0.0)
    return img.with_pixels((img.pixels - lo) / (hi - lo))


def _check_kernel(img: OctImage, kernel_px: int) -> None:
    if kernel_px < 1 or kernel_px % 2 == 0:
        raise ParameterError(f"kernel_px must be odd and positive, got {kernel_px}")
    if kernel_px > min(img.height_px, img.width_px):
        raise ParameterError(
            f"kernel_px {kernel_px} exceeds image extent "
            f"{img.height_px}x{img.width_px}"
        )
