"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class TruncationError(ValueError):
    """A truncated pmf dropped more probability mass than allowed."""


class ConfigError(ValueError):
    """Invalid experiment or simulation configuration."""


class NumericError(ArithmeticError):
    """NaN state or integer overflow during simulation."""


class InvariantViolation(RuntimeError):
    """A checked mathematical invariant failed at a queried point."""
