"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class PreconditionViolation(ValueError):
    """Raised when a field is not spacelike where it must be.

    ``node`` is the index of the worst offending node (or element base node).
    """

    def __init__(self, message, node=None, margin=None):
        super().__init__(message)
        self.node = node
        self.margin = margin


class AcausalityViolation(ValueError):
    def __init__(self, message, mu0):
        super().__init__(message)
        self.mu0 = mu0


class NonConvergence(RuntimeError):
    """Newton or continuity iteration failed; ``state`` holds the last good state."""

    def __init__(self, message, state=None, last_good_t=None):
        super().__init__(message)
        self.state = state
        self.last_good_t = last_good_t


class InfeasibleFit(ValueError):
    pass


class LinearSolveError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
