"""Exception types shared across the package."""


class RejectedInputError(ValueError):
    """An index, probability or argument is outside its valid range."""


class ShapeError(ValueError):
    """Array or table shapes do not line up."""


class ParseError(ValueError):
    """A layout or config file could not be parsed.

    ``row`` and ``col`` locate the offending character when known.
    """

    def __init__(self, message, row=None, col=None):
        if row is not None:
            message = f"{message} (row {row}, column {col})"
        super().__init__(message)
        self.row = row
        self.col = col


class CapabilityError(RuntimeError):
    """The environment is too large for an exhaustive operation."""


class ConfigurationError(ValueError):
    """Stores, mixers or configs were combined inconsistently."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite value."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
