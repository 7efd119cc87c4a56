"""Error types shared across the package, mapped to CLI exit codes."""


class MorphomlError(Exception):
    """Base class; exit code 4 (internal error) unless overridden."""

    exit_code = 4


class ValidationError(MorphomlError):
    """Bad configuration or arguments, rejected before any work starts."""

    exit_code = 2


class DataError(MorphomlError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class SchemaMismatchError(DataError):
    """Feature schema hash disagrees between producer and consumer."""
