"""Error hierarchy shared by the library and the CLI.

Each branch maps to one process exit code so failures stay
distinguishable from shell scripts: usage 2, io 3, validation 4,
numeric 5.
"""


class MedrekError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class UsageError(MedrekError):
    """Bad command line or incoherent option combination."""

    exit_code = 2


class IoError(MedrekError):
    """Missing or unreadable/unwritable file."""

    exit_code = 3


class ValidationError(MedrekError):
    """Input violates a schema, shape, or declared invariant."""

    exit_code = 4


class NumericError(MedrekError):
    """Non-finite value or numeric domain violation."""

    exit_code = 5


class ShapeError(ValidationError):
    """Operands have incompatible shapes for an op."""


class DomainError(NumericError):
    """Math op applied outside its domain (e.g. log of non-positive)."""


class SnapshotError(ValidationError):
    """Base for binary container problems."""


class BadMagicError(SnapshotError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(SnapshotError):
    """Container version is not one this build can read."""


class TruncatedError(SnapshotError):
    """File ends before the declared payload does."""
