"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A model parameter is outside its valid range."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class RefusalError(ValueError):
    """The request is valid but too expensive to honour (e.g. grid search with many users)."""


class ConfigError(Exception):
    """Invalid or unreadable experiment configuration.

    ``field`` names the offending dotted key when one is known.
    """

    exit_code = 2

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
