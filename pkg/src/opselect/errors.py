"""Exception types shared across the package.

The CLI maps these onto stable exit codes: ConfigError -> 2,
CheckpointError -> 3, ParseError -> 4, anything else -> 1.
"""


class OpselectError(Exception):
    """Base class for package-specific errors."""


class ConfigError(OpselectError):
    """Invalid or inconsistent run configuration."""


class CheckpointError(OpselectError):
    """Checkpoint file is malformed or does not match the configuration."""


class ParseError(OpselectError):
    """Instance or solution file could not be parsed.

    ``section`` names the offending TSPLIB section when known.
    """

    def __init__(self, message: str, section: str | None = None):
        super().__init__(message)
        self.section = section


class UnsupportedFormatError(ParseError):
    """File parsed but uses a feature this artifact does not support."""


class ShapeError(OpselectError):
    """Tensor shapes are inconsistent; message names both shapes."""


class InvalidMoveError(OpselectError):
    """A Move no longer matches the solution it is applied to."""
