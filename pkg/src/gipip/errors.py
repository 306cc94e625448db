"""Shared exception types.

Every failure mode in this package maps onto one of these so callers (and
the CLI exit-code logic) can tell configuration mistakes apart from data
corruption and from numerical blowups.
"""


class GipipError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(GipipError):
    """Operand shapes are incompatible for the requested operation."""


class ArgumentError(GipipError):
    """An argument value is outside the documented domain."""


class ConfigurationError(GipipError):
    """A config file or config object is invalid or inconsistent."""


class FormatError(GipipError):
    """A file on disk does not match its declared binary/text format."""


class NumericError(GipipError):
    """A computation produced non-finite values it cannot recover from."""


class ContractError(GipipError):
    """Two artifacts that must agree (e.g. model fingerprints) do not."""


class PartitionError(GipipError):
    """A data partition violates the auxiliary/target disjointness rule."""


class OracleInapplicableError(GipipError):
    """A closed-form reconstruction has no usable row for this gradient."""
