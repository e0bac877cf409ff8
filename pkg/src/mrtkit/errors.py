"""Exception hierarchy shared by all engines."""


class MrtkitError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgumentError(MrtkitError, ValueError):
    pass


class UnsupportedOrderError(MrtkitError, ValueError):
    pass


class UnsupportedFunctionalError(MrtkitError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class UnsupportedConfigurationError(MrtkitError, ValueError):
    pass


class DomainError(MrtkitError, ValueError):
    pass


class EstimationError(MrtkitError, RuntimeError):
    """Least-squares design stayed singular after the ridge fallback."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
