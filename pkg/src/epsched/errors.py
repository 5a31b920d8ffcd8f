"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class DomainError(ValueError):
    """An argument lies outside the operation's domain (e.g. a bad label)."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared where only finite values are allowed."""


class ConfigError(ValueError):
    """A configuration cannot be realized."""
