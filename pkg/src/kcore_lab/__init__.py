"""Tools for studying k-cores of kernel-driven inhomogeneous random graphs."""

from .errors import CapabilityError, ValidationError

__version__ = "0.1.0"

__all__ = ["CapabilityError", "ValidationError", "__version__"]
