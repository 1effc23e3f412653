"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """A numeric domain violation or non-finite value was produced."""


class ContractError(RuntimeError):
    """An API precondition was violated by the caller."""


class ConfigurationError(ValueError):
    """A configuration value is missing, unknown, or inconsistent."""


class FormatError(ValueError):
    """A binary or text artifact does not match its documented layout."""


class DegenerateBatchError(ValueError):
    """A batch is too small for a batch-statistics operation (needs B >= 2)."""
