"""Skin-layer segmentation and wound-healing quantification for OCT B-scans.

The package covers the full pipeline: synthetic phantom generation, despeckling,
patch extraction, U-Net training (base and pretrained-encoder variants), model
ensembling, segmentation metrics, and wound-bed quantification over time.
"""

__version__ = "0.1.0"

CLASS_NAMES = ("background", "epidermis", "dermis", "subcutaneous")
NUM_CLASSES = 4

from .data import OctImage, LabelMask, DatasetManifest, load_image, load_mask, load_manifest
from .errors import (
    OctosegError,
    FormatError,
    SchemaError,
    ValidationError,
    ParameterError,
    ContractError,
    CoverageError,
    ConfigurationError,
    TrainingError,
    MetricError,
    DegenerateInputError,
)

__all__ = [
    "CLASS_NAMES",
    "NUM_CLASSES",
    "OctImage",
    "LabelMask",
    "DatasetManifest",
    "load_image",
    "load_mask",
    "load_manifest",
    "OctosegError",
    "FormatError",
    "SchemaError",
    "ValidationError",
    "ParameterError",
    "ContractError",
    "CoverageError",
    "ConfigurationError",
    "TrainingError",
    "MetricError",
    "DegenerateInputError",
]
