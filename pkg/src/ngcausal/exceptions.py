"""Exception types raised across the package."""


class NGCError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NGCError, ValueError):
    """A parameter or configuration value violates a precondition."""


class InputError(NGCError, ValueError):
    """Input data is malformed or incompatible with the requested operation."""


class DivergenceError(NGCError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, iteration=None, learning_rate=None, target=None):
        super().__init__(message)
        self.iteration = iteration
        self.learning_rate = learning_rate
        self.target = target


class TrainingError(NGCError, RuntimeError):
    """One or more target models in a bank failed to train.

    ``failures`` maps target index to the underlying exception.
    """

    def __init__(self, failures):
        self.failures = dict(failures)
        detail = "; ".join(
            str(exc) if str(exc).startswith(f"target {i}:") else f"target {i}: {exc}"
            for i, exc in sorted(self.failures.items())
        )
        super().__init__(f"{len(self.failures)} model(s) failed: {detail}")
