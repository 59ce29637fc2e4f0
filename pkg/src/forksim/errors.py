"""Exception types shared across the package."""


class ForksimError(Exception):
    """Base class for all package errors."""


class ParameterError(ForksimError):
    """A parameter is outside its admissible range (validity violations included)."""


class MalformedViewError(ForksimError):
    """A view fails one of its structural invariants."""


class ProtocolViolationError(ForksimError):
    """A strategy emitted an action the game rules do not allow."""


class PrecisionError(ForksimError):
    """Numerical bookkeeping drifted beyond the configured tolerance."""
