"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class EmptyInputError(ValueError):
    """An operation received zero rows where at least one is required."""


class LabelError(ValueError):
    """A class label or bin index is out of range."""


class CountError(ValueError):
    """A requested sample count exceeds what is available."""


class NumericError(ArithmeticError):
    """A non-finite value appeared in a computation."""


class ClassError(KeyError):
    """Unknown class id or class name."""


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class FormatError(ValueError):
    """Malformed binary file; ``offset`` is the byte position of the failure."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
