"""Exception types shared across the package."""


class ScmmError(Exception):
    """Base class for all package errors."""


class DimensionError(ScmmError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ScmmError):
    """A value lies outside the mathematical domain of an operation."""


class ContractError(ScmmError):
    """An API precondition was violated."""


class ConfigurationError(ScmmError):
    """A configuration value is invalid or infeasible."""


class FormatError(ScmmError):
    """A stored file does not match its expected binary or JSON layout."""


class AlignmentError(ScmmError):
    """A channel-alignment request cannot be satisfied."""


class DegenerateBatchError(ScmmError):
    """All pairwise distances in a batch are equal; normalization is undefined."""


class OptimizationError(ScmmError):
    """The optimizer encountered a non-finite gradient or invalid state."""
