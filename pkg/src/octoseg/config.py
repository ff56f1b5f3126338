"""Flat key=value run configuration shared by the CLI subcommands.

One namespace covers training hyperparameters, patch grid defaults,
phantom geometry, preprocessing, and pixel spacing, so a single file can
pin an entire reproducible run. Unknown keys are rejected rather than
ignored; a typo should fail loudly, not silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError


def _float_triple(text):
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated values, got {text!r}")
    return tuple(float(p) for p in parts)


# key -> (parser, default)
SCHEMA = {
    # trainer
    "learning_rate": (float, 1e-5),
    "epochs": (int, 30),
    "batch_size": (int, 8),
    "optimizer": (str, "adam"),
    "loss": (str, "categorical_cross_entropy"),
    "val_fraction": (float, 0.2),
    "split_seed": (int, 0),
    # patch grid
    "patch_px": (int, 128),
    "stride_px": (int, 64),
    "min_unique": (int, 2),
    # preprocessing
    "kernel_px": (int, 3),
    "passes": (int, 1),
    # phantom geometry
    "height_px": (int, 256),
    "width_px": (int, 512),
    "layer_mean_thickness_px": (_float_triple, (26.0, 72.0, 110.0)),
    "boundary_wobble_px": (float, 6.0),
    "layer_mean_intensity": (_float_triple, (0.82, 0.58, 0.38)),
    "speckle_shape": (float, 4.0),
    "wound_center_frac": (float, 0.5),
    "wound_halfwidth_frac": (float, 0.0),
    "seed": (int, 0),
    "top_margin_px": (int, 24),
    # spacing
    "axial_um_per_px": (float, 10.0),
    "lateral_um_per_px": (float, 25.0),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: default for k, (_, default) in SCHEMA.items()}
        for key, value in self.values.items():
            if key not in SCHEMA:
                raise ConfigurationError(f"unknown config key {key!r}")
            merged[key] = value
        self.values = merged

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def updated(self, **overrides) -> "RunConfig":
        """Copy with the given keys replaced (None values are ignored)."""
        vals = dict(self.values)
        for k, v in overrides.items():
            if v is None:
                continue
            if k not in SCHEMA:
                raise ConfigurationError(f"unknown config key {k!r}")
            vals[k] = v
        return RunConfig(vals)

    def snapshot(self) -> dict:
        """JSON-friendly copy of every setting."""
        out = {}
        for k, v in self.values.items():
            out[k] = list(v) if isinstance(v, tuple) else v
        return out


def parse_value(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigurationError(f"unknown config key {key!r}")
    parse, _ = SCHEMA[key]
    try:
        return parse(raw.strip())
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad value for {key}: {raw!r} ({exc})") from None


def load_config(path) -> RunConfig:
    """Read `key = value` lines; `#` starts a comment, blank lines skipped."""
    path = Path(path)
    values = {}
    for ln, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{ln}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        values[key] = parse_value(key, value)
    return RunConfig(values)
