"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class SchemaError(ValueError):
    """Column names or file layout do not match what was expected."""


class LeadingGapError(ValueError):
    """A column starts with missing values, so there is nothing to fill from."""


class WarmupError(ValueError):
    """Not enough history rows to build the first lookback window."""


class ZeroVarianceError(ValueError):
    """A column has zero spread where a standard deviation must be positive."""


class UndefinedCorrelationError(ValueError):
    """Rank correlation requested for an input whose ranks do not vary."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"loss became {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class StabilityError(ValueError):
    """MA polynomial has a root inside the unit circle."""


class FitError(RuntimeError):
    """No candidate SARIMA order produced a usable fit."""


class ConfigError(ValueError):
    """Experiment configuration could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class ConfigParseError(ConfigError):
    """A configuration value has the wrong form for its key."""
