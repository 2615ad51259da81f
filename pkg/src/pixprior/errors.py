"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid argument value or inconsistent shapes."""


class ContractError(ValueError):
    """An operation was called on an object that does not meet its precondition."""


class FormatError(ValueError):
    """A file does not follow the expected on-disk format."""


class ShapeError(FormatError):
    """A file's payload does not match its declared shape."""


class NumericError(RuntimeError):
    """A computation produced non-finite values or diverged."""


class ConfigError(ValueError):
    """An experiment or training config is invalid.

    Args:
        field (str): dotted name of the offending config entry.
        message (str): human-readable explanation.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
