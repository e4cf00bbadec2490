"""Exception hierarchy shared across the codec.

Everything raised on purpose derives from MvrError so CLI code can map
failures onto exit codes without enumerating modules.
"""

__all__ = [
    "MvrError",
    "ShapeError",
    "DomainError",
    "FormatError",
    "TruncatedError",
    "VersionError",
    "ChecksumError",
    "CapacityError",
    "RateError",
    "InfeasibleBudgetError",
]


class MvrError(Exception):
    """Base class for all codec errors."""


class ShapeError(MvrError):
    """An array has the wrong rank, size, or channel count."""


class DomainError(MvrError):
    """A value is outside its documented domain (bounds, signs, enums)."""


class FormatError(MvrError):
    """A serialized artifact (container, weight file, .flo) is malformed."""


class TruncatedError(FormatError):
    """File ended before the declared payload was read."""


class VersionError(FormatError):
    """Magic matched but the version field is unsupported."""


class ChecksumError(FormatError):
    """Payload checksum mismatch, the file is corrupt."""


class CapacityError(MvrError):
    """A coding table or buffer cannot represent the requested size."""


class RateError(MvrError):
    """A symbol has zero probability under the model used to price it."""


class InfeasibleBudgetError(MvrError):
    """No feasible allocation exists under the byte budget."""
