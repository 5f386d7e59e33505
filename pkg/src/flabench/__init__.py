"""Feature-level augmentation for small CNNs and an affine-stability benchmark.

Everything is plain numpy: tensors are ``(n, c, h, w)`` float32 arrays and
every layer has a hand-written backward pass.
"""

from .errors import ConfigError, DataError, FormatError, NumericError, ShapeError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "FormatError", "NumericError", "ShapeError", "__version__"]
