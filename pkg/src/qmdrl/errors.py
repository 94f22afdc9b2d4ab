"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument is outside the domain an operation accepts."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed or inconsistent.

    ``key`` carries the dotted key path (``"policy.num_qubits"``) when known.
    """

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class UnsupportedComponentError(InvalidArgumentError):
    pass


class EpisodeFinishedError(RuntimeError):
    pass


class NumericalError(ArithmeticError):
    """A loss or gradient evaluation produced a non-finite value."""

    def __init__(self, message: str, component: int | None = None):
        self.component = component
        super().__init__(message)
