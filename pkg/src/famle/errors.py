"""Exception hierarchy shared by every module."""


class FamleError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(FamleError, ValueError):
    """Dimensions or hyperparameters are inconsistent."""


class InputError(FamleError, ValueError):
    """Numerical input is malformed (non-finite entries and the like)."""


class UsageError(FamleError, ValueError):
    """An operation was called outside its domain (empty batch, ...)."""


class DivergedUpdateError(FamleError, ArithmeticError):
    """A gradient update produced a non-finite loss or state."""

    def __init__(self, message, step=None, iteration=None):
        super().__init__(message)
        self.step = step
        self.iteration = iteration


class PlanningFailure(FamleError, RuntimeError):
    """Every candidate trajectory was discarded during planning."""
