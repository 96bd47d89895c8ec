"""Exception types shared across the package."""


class LearError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(LearError, ValueError):
    pass


class DegenerateError(LearError, ValueError):
    """A reduction or normalization had nothing to work on (e.g. a fully masked slice)."""


class ContractError(LearError, ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(LearError, ValueError):
    pass


class ValidationError(LearError, ValueError):
    """Input data (corpus, label file, checkpoint) failed validation."""


class InsufficientDataError(LearError, ValueError):
    pass


class StaleCacheError(LearError, RuntimeError):
    """A cached value was read after the parameters it depends on changed."""


class DivergenceError(LearError, RuntimeError):
    """Training produced a non-finite gradient or loss."""
