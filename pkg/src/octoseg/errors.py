"""Exception types shared across the package."""


class OctosegError(Exception):
    """Base class for all package-specific errors."""


class FormatError(OctosegError, ValueError):
    """Raster file has an unsupported layout (e.g. multi-channel input)."""


class SchemaError(OctosegError, ValueError):
    """Mask contains values outside the label schema."""


class ValidationError(OctosegError, ValueError):
    """Manifest or paired data failed validation."""


class ParameterError(OctosegError, ValueError):
    """An operation was called with out-of-contract parameters."""


class ContractError(OctosegError, ValueError):
    """A precondition on operation inputs was violated."""


class CoverageError(OctosegError, ValueError):
    """Stitching found pixels not covered by any patch."""


class ConfigurationError(OctosegError, ValueError):
    """Unknown architecture, bad config key, or malformed config value."""


class TrainingError(OctosegError, RuntimeError):
    """Training diverged; carries the last finite history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class MetricError(OctosegError, ValueError):
    """A metric is undefined for the given inputs."""


class DegenerateInputError(OctosegError, ValueError):
    """Input is degenerate for the requested quantity (e.g. no intact epidermis)."""
