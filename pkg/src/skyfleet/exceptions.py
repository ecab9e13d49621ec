"""Exception types raised across the simulator."""


class SkyfleetError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(SkyfleetError, ValueError):
    """A camera, grid or scenario parameter is unusable."""


class DomainError(SkyfleetError, ValueError):
    """An argument lies outside the domain of a formula."""


class GenerationError(SkyfleetError, RuntimeError):
    """Procedural scene generation could not satisfy its constraints."""

    def __init__(self, message, seed=None):
        super().__init__(message)
        self.seed = seed


class ValidationError(ConfigurationError):
    """A configuration document failed validation.

    ``field`` holds the dotted path of the offending key.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
