"""Exception types shared across the package."""


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a model equation."""
