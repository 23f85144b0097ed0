"""Exception types shared across the package."""


class EdgePopError(Exception):
    """Base class for every error raised by edgepop."""


class DimensionError(EdgePopError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ParameterError(EdgePopError, ValueError):
    """A numeric parameter lies outside its valid range."""


class DataError(EdgePopError, ValueError):
    """Input data (labels, datasets) violate an operation's contract."""


class FormatError(EdgePopError, ValueError):
    """A file does not match the expected binary or text format."""


class ConfigError(EdgePopError, ValueError):
    """A run configuration is invalid."""


class GraphError(EdgePopError, RuntimeError):
    """The computation graph cannot be differentiated."""


class NonFiniteError(EdgePopError, FloatingPointError):
    """An operation produced NaN or Inf."""
