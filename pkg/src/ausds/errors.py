"""Exception types shared across the package."""


class FormatError(ValueError):
    """A binary or text artifact does not match its declared layout."""


class ConfigurationError(ValueError):
    """A config value is outside its documented domain."""


class ShapeError(ValueError):
    """An array argument has the wrong dimensionality or width."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class StalenessError(RuntimeError):
    """A latent point or mapper was produced under an older encoder version."""


class PoolInvariantError(RuntimeError):
    """A labeled/unlabeled bookkeeping invariant was violated."""
