"""Exception types shared across the package."""


class ArgumentError(ValueError):
    """An argument violates a documented precondition (grid mismatch, dt <= 0, ...)."""


class DomainError(ValueError):
    """A quantity is undefined for the given inputs (divergent integral, singular point)."""


class NonConvergenceError(RuntimeError):
    """An iterative solve stopped before reaching its tolerance.

    The residual history is kept on ``history`` so callers can inspect how far
    the iteration got.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])
