"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes do not line up."""


class ConfigError(ValueError):
    """Invalid model, training or run configuration."""


class DataError(ValueError):
    """Dataset content is unusable (empty split, label out of range, ...)."""


class FormatError(ValueError):
    """A binary or text file does not follow its declared format."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values (e.g. diverging loss)."""
