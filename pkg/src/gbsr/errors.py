"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError and CheckpointError -> 3.
"""


class GbsrError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GbsrError):
    """Invalid or inconsistent configuration."""


class DataError(GbsrError):
    """Missing, malformed, or degenerate input data."""


class ParseError(DataError):
    """A line in an edge file failed to parse."""

    def __init__(self, path, lineno, detail):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {detail}")


class NumericError(GbsrError):
    """Non-finite values encountered during training or evaluation."""


class CheckpointError(GbsrError):
    """Checkpoint file is corrupt or has an unsupported layout."""
