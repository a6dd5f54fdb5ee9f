"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes or channel counts do not line up."""


class ConfigError(ValueError):
    """Malformed or inconsistent model configuration."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(ValueError):
    """A file on disk does not follow the expected binary or text layout."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
