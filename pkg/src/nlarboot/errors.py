"""Exception types shared across the package."""


class NlarError(Exception):
    """Base class for all package-specific errors."""


class DomainViolation(NlarError, ValueError):
    """A parameter vector lies outside its domain box, or an input has the wrong shape."""


class DegenerateSeriesError(NlarError, ValueError):
    """The input data carries no usable variation (e.g. a constant series)."""


class ExplosionError(NlarError, RuntimeError):
    """A recursion produced a non-finite or absurdly large value.

    Attributes
    ----------
    step : int
        Index of the recursion step at which the guard tripped.
    value : float
        The offending value.
    """

    def __init__(self, step: int, value: float, context: str = "simulation"):
        self.step = step
        self.value = value
        super().__init__(
            f"{context} exploded at step {step}: value {value!r} "
            "(non-finite or beyond the stability threshold)"
        )


class FitFailure(NlarError, RuntimeError):
    """A model fit (or a bootstrap refit) failed hard after retries."""


class ConfigError(NlarError, ValueError):
    """A run configuration or model config file is invalid."""
