"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment configuration: unknown key, bad value, or missing field."""


class DegenerateBeamError(RuntimeError):
    """A beam is numerically orthogonal to an estimated channel, so the
    receiver scaling factor is undefined."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance.

    Diagnostic quantities (last Rayleigh quotient, residuals, ...) are kept
    in the ``info`` dict so callers can decide whether to retry.
    """

    def __init__(self, message: str, **info):
        super().__init__(message)
        self.info = dict(info)


class UnsupportedTaskError(ValueError):
    """The requested operation needs a strongly convex task."""
