"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ExitTimeoutError(RuntimeError):
    """A path did not leave the ball before ``max_time``."""

    def __init__(self, message, path_index=None, n=None):
        super().__init__(message)
        self.path_index = path_index
        self.n = n


class ConfigError(ValueError):
    """Invalid experiment or catalog configuration.

    ``field`` names the offending configuration key when there is one.
    """

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
