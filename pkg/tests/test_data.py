"""Raster and manifest round-trips, normalization, schema validation."""

import numpy as np
import pytest
from PIL import Image

from octoseg.data import (
    DEFAULT_AXIAL_UM_PER_PX,
    DEFAULT_LATERAL_UM_PER_PX,
    DatasetManifest,
    LabelMask,
    ManifestEntry,
    OctImage,
    load_image,
    load_manifest,
    load_mask,
    save_image,
    save_manifest,
    save_mask,
)
from octoseg.errors import FormatError, SchemaError, ValidationError


def write_png(path, arr):
    Image.fromarray(arr).save(path)


def test_load_8bit_max_is_one(tmp_path):
    p = tmp_path / "a.png"
    write_png(p, np.full((40, 40), 255, dtype=np.uint8))
    img = load_image(p)
    assert img.pixels.shape == (40, 40)
    assert np.all(img.pixels == 1.0)


def test_load_8bit_zero_is_zero(tmp_path):
    p = tmp_path / "a.png"
    write_png(p, np.zeros((40, 40), dtype=np.uint8))
    assert np.all(load_image(p).pixels == 0.0)


def test_load_16bit_midpoint(tmp_path):
    p = tmp_path / "a.png"
    write_png(p, np.full((40, 40), 32768, dtype=np.uint16))
    img = load_image(p)
    assert img.pixels[0, 0] == pytest.approx(32768 / 65535, abs=1e-12)


def test_multichannel_rejected(tmp_path):
    p = tmp_path / "rgb.png"
    write_png(p, np.zeros((40, 40, 3), dtype=np.uint8))
    with pytest.raises(FormatError):
        load_image(p)


def test_unreadable_file_raises_oserror(tmp_path):
    p = tmp_path / "junk.png"
    p.write_bytes(b"not a png")
    with pytest.raises(OSError):
        load_image(p)


def test_too_small_raster_rejected(tmp_path):
    p = tmp_path / "tiny.png"
    write_png(p, np.zeros((8, 8), dtype=np.uint8))
    with pytest.raises(FormatError):
        load_image(p)


def test_save_load_roundtrip_16bit(tmp_path):
    rng = np.random.default_rng(0)
    img = OctImage(rng.random((48, 64)))
    p = tmp_path / "r.png"
    save_image(img, p)
    back = load_image(p)
    assert np.max(np.abs(back.pixels - img.pixels)) <= 1.0 / 65535


def test_tiff_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    img = OctImage(rng.random((40, 40)))
    p = tmp_path / "r.tiff"
    save_image(img, p)
    back = load_image(p)
    assert np.max(np.abs(back.pixels - img.pixels)) <= 1.0 / 65535


def test_spacing_sidecar_appended_name(tmp_path):
    p = tmp_path / "b.png"
    write_png(p, np.zeros((40, 40), dtype=np.uint8))
    (tmp_path / "b.png.meta").write_text(
        "axial_um_per_px = 7.5\nlateral_um_per_px = 12.0\n"
    )
    img = load_image(p)
    assert img.axial_um_per_px == 7.5
    assert img.lateral_um_per_px == 12.0


def test_spacing_defaults_without_sidecar(tmp_path):
    p = tmp_path / "c.png"
    write_png(p, np.zeros((40, 40), dtype=np.uint8))
    img = load_image(p)
    assert img.axial_um_per_px == DEFAULT_AXIAL_UM_PER_PX
    assert img.lateral_um_per_px == DEFAULT_LATERAL_UM_PER_PX


def test_incomplete_sidecar_rejected(tmp_path):
    p = tmp_path / "d.png"
    write_png(p, np.zeros((40, 40), dtype=np.uint8))
    (tmp_path / "d.png.meta").write_text("axial_um_per_px = 7.5\n")
    with pytest.raises(ValidationError):
        load_image(p)


def test_mask_all_background_valid(tmp_path):
    p = tmp_path / "m.png"
    save_mask(LabelMask(np.zeros((20, 20), dtype=np.uint8)), p)
    assert np.all(load_mask(p).labels == 0)


def test_mask_out_of_range_names_location(tmp_path):
    p = tmp_path / "m.png"
    arr = np.zeros((20, 20), dtype=np.uint8)
    arr[3, 7] = 4
    write_png(p, arr)
    with pytest.raises(SchemaError) as exc:
        load_mask(p)
    assert "4" in str(exc.value)
    assert "3" in str(exc.value) and "7" in str(exc.value)


def test_mask_identity_values(tmp_path):
    arr = np.array([[1, 2], [3, 0]], dtype=np.uint8)
    p = tmp_path / "m.png"
    write_png(p, arr)
    assert np.array_equal(load_mask(p).labels, arr)


def test_mask_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(7)
    m = LabelMask(rng.integers(0, 4, size=(33, 57)))
    p = tmp_path / "m.png"
    save_mask(m, p)
    assert np.array_equal(load_mask(p).labels, m.labels)


def test_mask_rejects_rgb(tmp_path):
    p = tmp_path / "m.png"
    write_png(p, np.zeros((20, 20, 3), dtype=np.uint8))
    with pytest.raises(FormatError):
        load_mask(p)


def test_labelmask_type_checks():
    with pytest.raises(SchemaError):
        LabelMask(np.zeros((4, 4), dtype=np.float64))
    with pytest.raises(SchemaError):
        LabelMask(np.full((4, 4), 9, dtype=np.int64))
    with pytest.raises(FormatError):
        LabelMask(np.zeros((4, 4, 2), dtype=np.uint8))


def test_octimage_validation():
    with pytest.raises(FormatError):
        OctImage(np.zeros((4, 4, 4)))
    with pytest.raises(ValidationError):
        OctImage(np.zeros((40, 40)), axial_um_per_px=0.0)
    with pytest.raises(ValidationError):
        OctImage(np.zeros((40, 40)), day=-1)


def test_empty_manifest(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("")
    assert len(load_manifest(p)) == 0


def test_manifest_single_pair(tmp_path):
    write_png(tmp_path / "i.png", np.zeros((40, 40), dtype=np.uint8))
    save_mask(LabelMask(np.zeros((40, 40), dtype=np.uint8)), tmp_path / "k.png")
    man = tmp_path / "m.tsv"
    man.write_text("i.png\tk.png\ts1\t4\n")
    loaded = load_manifest(man)
    assert len(loaded) == 1
    e = loaded.entries[0]
    assert e.subject_id == "s1" and e.day == 4
    assert e.image_path.is_file() and e.mask_path.is_file()


def test_manifest_shape_mismatch(tmp_path):
    write_png(tmp_path / "i.png", np.zeros((40, 40), dtype=np.uint8))
    save_mask(LabelMask(np.zeros((42, 40), dtype=np.uint8)), tmp_path / "k.png")
    man = tmp_path / "m.tsv"
    man.write_text("i.png\tk.png\ts1\t0\n")
    with pytest.raises(ValidationError) as exc:
        load_manifest(man)
    assert "i.png" in str(exc.value) and "k.png" in str(exc.value)


def test_manifest_missing_file(tmp_path):
    man = tmp_path / "m.tsv"
    man.write_text("ghost.png\tghost_mask.png\ts\t0\n")
    with pytest.raises(ValidationError):
        load_manifest(man)


def test_manifest_bad_field_count(tmp_path):
    man = tmp_path / "m.tsv"
    man.write_text("a.png\tb.png\ts\n")
    with pytest.raises(ValidationError):
        load_manifest(man)


def test_manifest_roundtrip(tmp_path):
    write_png(tmp_path / "i.png", np.zeros((40, 40), dtype=np.uint8))
    save_mask(LabelMask(np.zeros((40, 40), dtype=np.uint8)), tmp_path / "k.png")
    m = DatasetManifest([ManifestEntry(tmp_path / "i.png", tmp_path / "k.png", "s9", 12)])
    out = tmp_path / "round.tsv"
    save_manifest(m, out)
    back = load_manifest(out)
    assert back.entries[0].subject_id == "s9"
    assert back.entries[0].day == 12
    assert back.entries[0].image_path.name == "i.png"
