"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class IllConditionedError(ArithmeticError):
    """Linear system is singular or too ill-conditioned to solve reliably."""


class IdxFormatError(ValueError):
    """IDX file violates the format contract."""


class IdxBadMagicError(IdxFormatError):
    """IDX magic number is not one of the supported values."""


class IdxTruncatedError(IdxFormatError):
    """IDX file ends before the declared payload."""


class IdxDimensionError(IdxFormatError):
    """IDX declared dimensions are absurdly large."""


class CacheFormatError(ValueError):
    """Binary cache/checkpoint container is malformed."""


class ConfigError(ValueError):
    """Run configuration failed validation."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""
