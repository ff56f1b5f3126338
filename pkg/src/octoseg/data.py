"""Canonical rasters, label schema, manifests, and on-disk formats.

Images are lossless single-channel PNG/TIFF at 8 or 16 bit, normalized to
[0, 1] on load. Masks are 8-bit indexed PNG with ids 0=background,
1=epidermis, 2=dermis, 3=subcutaneous. A manifest is a UTF-8 tab-separated
table with one ``image<TAB>mask<TAB>subject<TAB>day`` record per line.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, SchemaError, ValidationError

NUM_CLASSES = 4
CLASS_NAMES = ("background", "epidermis", "dermis", "subcutaneous")

# Fallback pixel pitch when no sidecar is present (micrometers per pixel).
DEFAULT_AXIAL_UM_PER_PX = 10.0
DEFAULT_LATERAL_UM_PER_PX = 25.0

MIN_SIDE_PX = 32

# Display palette for indexed mask files: black, cyan, yellow, red.
_MASK_PALETTE = [0, 0, 0, 0, 255, 255, 255, 255, 0, 255, 0, 0]


@dataclass
class OctImage:
    """A 2-D grayscale B-scan with physical pixel spacing.

    ``pixels`` is a float array with intensities in [0, 1]. Loaders enforce
    the minimum raster size; directly constructed instances only need a
    well-formed 2-D array and positive spacing.
    """

    pixels: np.ndarray
    axial_um_per_px: float = DEFAULT_AXIAL_UM_PER_PX
    lateral_um_per_px: float = DEFAULT_LATERAL_UM_PER_PX
    subject_id: str = ""
    day: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise FormatError(f"expected a 2-D raster, got shape {self.pixels.shape}")
        if self.axial_um_per_px <= 0 or self.lateral_um_per_px <= 0:
            raise ValidationError("pixel spacing must be positive")
        if self.day < 0:
            raise ValidationError("day must be non-negative")

    @property
    def height_px(self) -> int:
        return self.pixels.shape[0]

    @property
    def width_px(self) -> int:
        return self.pixels.shape[1]

    def with_pixels(self, pixels: np.ndarray) -> "OctImage":
        """Copy of this image with new pixel data, same spacing and identity."""
        return OctImage(pixels, self.axial_um_per_px, self.lateral_um_per_px,
                        self.subject_id, self.day)


@dataclass
class LabelMask:
    """Per-pixel class ids over {0, 1, 2, 3}, same shape as the paired image."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise FormatError(f"expected a 2-D mask, got shape {self.labels.shape}")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise SchemaError(f"mask dtype must be integer, got {self.labels.dtype}")
        bad = (self.labels < 0) | (self.labels >= NUM_CLASSES)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise SchemaError(
                f"mask value {int(self.labels[r, c])} at (row={r}, col={c}) "
                f"is outside the label schema {{0,1,2,3}}"
            )
        self.labels = self.labels.astype(np.uint8)

    @property
    def shape(self) -> tuple:
        return self.labels.shape


@dataclass
class ManifestEntry:
    image_path: Path
    mask_path: Path
    subject_id: str
    day: int


@dataclass
class DatasetManifest:
    """Validated list of image/mask pairs with subject and imaging day."""

    entries: list[ManifestEntry] = field(default_factory=list)
    class_names: tuple = CLASS_NAMES

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def _raster_to_unit(arr: np.ndarray, path) -> np.ndarray:
    """Rescale an integer raster by its max representable value."""
    if arr.ndim == 3:
        raise FormatError(f"{path}: expected single-channel raster, got {arr.shape[2]} channels")
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected 2-D raster, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype in (np.uint16, np.int32):
        # PIL decodes 16-bit grayscale as mode "I;16" (uint16) or "I" (int32).
        return arr.astype(np.float64) / 65535.0
    if np.issubdtype(arr.dtype, np.floating):
        return arr.astype(np.float64)
    raise FormatError(f"{path}: unsupported raster dtype {arr.dtype}")


def read_spacing_sidecar(image_path) -> tuple[float, float] | None:
    """Read ``<image>.meta`` spacing if present; None when absent.

    Both ``scan.png.meta`` and ``scan.meta`` are accepted, in that order.
    """
    p = Path(image_path)
    candidates = [Path(str(p) + ".meta"), p.with_suffix(".meta")]
    for cand in candidates:
        if cand.is_file():
            axial, lateral = None, None
            for line in cand.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if not line or line.startswith("#") or "=" not in line:
                    continue
                key, _, value = line.partition("=")
                key = key.strip()
                try:
                    if key == "axial_um_per_px":
                        axial = float(value)
                    elif key == "lateral_um_per_px":
                        lateral = float(value)
                except ValueError as exc:
                    raise ValidationError(f"{cand}: bad spacing value {value!r}") from exc
            if axial is None or lateral is None:
                raise ValidationError(f"{cand}: sidecar must define axial_um_per_px and lateral_um_per_px")
            return axial, lateral
    return None


def load_image(path, subject_id: str | None = None, day: int = 0) -> OctImage:
    """Load a lossless single-channel raster as an OctImage in [0, 1].

    8- and 16-bit inputs are rescaled by their max representable value.
    Spacing comes from the ``.meta`` sidecar when present, otherwise the
    package defaults (10 um axial, 25 um lateral).
    """
    path = Path(path)
    with Image.open(path) as im:
        arr = np.asarray(im)
    pixels = _raster_to_unit(arr, path)
    if pixels.shape[0] < MIN_SIDE_PX or pixels.shape[1] < MIN_SIDE_PX:
        raise FormatError(f"{path}: raster {pixels.shape} below minimum {MIN_SIDE_PX} px per side")
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise FormatError(f"{path}: intensities outside [0, 1] after rescaling")
    spacing = read_spacing_sidecar(path)
    axial, lateral = spacing if spacing else (DEFAULT_AXIAL_UM_PER_PX, DEFAULT_LATERAL_UM_PER_PX)
    return OctImage(pixels, axial, lateral,
                    subject_id=subject_id if subject_id is not None else path.stem, day=day)


def save_image(img: OctImage, path) -> None:
    """Write an OctImage as 16-bit grayscale PNG (atomic replace)."""
    path = Path(path)
    quant = np.round(np.clip(img.pixels, 0.0, 1.0) * 65535.0).astype(np.uint16)
    _atomic_pil_save(Image.fromarray(quant), path)


def load_mask(path) -> LabelMask:
    """Load an 8-bit raster of class ids, validated against {0,1,2,3}."""
    path = Path(path)
    with Image.open(path) as im:
        if im.mode not in ("P", "L", "I", "I;16"):
            raise FormatError(f"{path}: mask must be a single-channel indexed raster, got mode {im.mode}")
        arr = np.asarray(im)
    try:
        return LabelMask(arr.astype(np.int64))
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def save_mask(mask: LabelMask, path) -> None:
    """Write a LabelMask as 8-bit indexed PNG (lossless round-trip)."""
    path = Path(path)
    im = Image.fromarray(mask.labels.astype(np.uint8), mode="P")
    im.putpalette(_MASK_PALETTE)
    _atomic_pil_save(im, path)


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a tab-separated dataset manifest.

    Relative paths resolve against the manifest's directory. Every pair is
    checked for existence and matching raster shape (header-only reads).
    """
    path = Path(path)
    base = path.parent
    entries = []
    for ln, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValidationError(f"{path}:{ln}: expected 4 tab-separated fields, got {len(parts)}")
        img_p = (base / parts[0]).resolve() if not os.path.isabs(parts[0]) else Path(parts[0])
        mask_p = (base / parts[1]).resolve() if not os.path.isabs(parts[1]) else Path(parts[1])
        try:
            day = int(parts[3])
        except ValueError:
            raise ValidationError(f"{path}:{ln}: day must be an integer, got {parts[3]!r}") from None
        for p in (img_p, mask_p):
            if not p.is_file():
                raise ValidationError(f"{path}:{ln}: missing file {p}")
        with Image.open(img_p) as im:
            img_size = im.size
        with Image.open(mask_p) as im:
            mask_size = im.size
        if img_size != mask_size:
            raise ValidationError(
                f"{path}:{ln}: shape mismatch between {img_p.name} {img_size[::-1]} "
                f"and {mask_p.name} {mask_size[::-1]}"
            )
        entries.append(ManifestEntry(img_p, mask_p, parts[2], day))
    return DatasetManifest(entries)


def save_manifest(manifest: DatasetManifest, path, relative_to=None) -> None:
    """Write a manifest as tab-separated UTF-8 text (atomic replace)."""
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    lines = []
    for e in manifest.entries:
        img = _relativize(e.image_path, base)
        msk = _relativize(e.mask_path, base)
        lines.append(f"{img}\t{msk}\t{e.subject_id}\t{e.day}")
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_entry(entry: ManifestEntry) -> tuple[OctImage, LabelMask]:
    """Load the image and mask for one manifest entry."""
    img = load_image(entry.image_path, subject_id=entry.subject_id, day=entry.day)
    mask = load_mask(entry.mask_path)
    if mask.shape != img.pixels.shape:
        raise ValidationError(
            f"shape mismatch between {entry.image_path} and {entry.mask_path}"
        )
    return img, mask


def _relativize(p: Path, base: Path) -> str:
    try:
        return os.path.relpath(p, base)
    except ValueError:
        return str(p)


def atomic_write_text(path: Path, text: str) -> None:
    """Write text via a temp file and rename, never leaving partial output."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _atomic_pil_save(im: Image.Image, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp" + path.suffix)
    fmt = "TIFF" if path.suffix.lower() in (".tif", ".tiff") else "PNG"
    im.save(tmp, format=fmt)
    os.replace(tmp, path)
