"""Exception hierarchy shared by every module."""


class ShiftCalError(Exception):
    """Base class for all errors raised by shiftcal."""


class ConfigError(ShiftCalError, ValueError):
    """Invalid configuration (bad covariance, nonpositive ratio, ...)."""


class SplitError(ShiftCalError, ValueError):
    """A requested split would leave one side empty."""


class ParseError(ShiftCalError, ValueError):
    """Malformed input file. ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeError(ShiftCalError, ValueError):
    """Array dimensions do not match what the model or calibrator expects."""


class NumericError(ShiftCalError, FloatingPointError):
    """Non-finite values where finite ones are required."""


class DegenerateWeightsError(ShiftCalError, ValueError):
    """Weights sum to zero, so a weighted average is undefined."""


class OptimizationError(ShiftCalError, RuntimeError):
    """Training diverged. ``epoch`` is the epoch where the loss went non-finite."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
