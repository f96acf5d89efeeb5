"""Evolved divergence-based landing controllers: simulation, evolution and analysis."""

from divland.errors import DomainError

__version__ = "0.1.0"

__all__ = ["DomainError", "__version__"]
