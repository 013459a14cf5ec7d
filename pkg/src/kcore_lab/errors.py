"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition or type invariant."""


class CapabilityError(RuntimeError):
    """Request is well-formed but beyond what the chosen method supports."""
