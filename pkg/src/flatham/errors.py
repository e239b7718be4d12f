"""Exception hierarchy shared by all modules."""


class FlathamError(Exception):
    pass


class ModelError(FlathamError, ValueError):
    """Invalid problem instance."""


class NonPeriodicInput(FlathamError, ValueError):
    pass


class DerivativeUnavailable(FlathamError):
    pass


class StepFailure(FlathamError, RuntimeError):
    """The adaptive ODE controller gave up."""


class LevelNotClosed(FlathamError, RuntimeError):
    pass


class LeftCollar(FlathamError, ValueError):
    pass


class OnBoundary(FlathamError, ValueError):
    pass


class EllipticityViolation(FlathamError, ValueError):
    pass


class InsufficientPaths(FlathamError, ValueError):
    pass


class BlowUp(FlathamError, RuntimeError):
    pass


class TableGap(FlathamError, ValueError):
    pass


class SingularMode(FlathamError, ValueError):
    pass


class GridMismatch(FlathamError, ValueError):
    pass


class ConfigError(FlathamError, ValueError):
    """Bad experiment configuration. ``key`` names the offending entry."""

    def __init__(self, key, message=None):
        self.key = key
        super().__init__(f"{key}: {message}" if message else key)
