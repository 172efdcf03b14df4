"""Error types shared across modules."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """A configuration value violates a structural constraint."""


class ParameterError(ValueError):
    """A scalar argument is outside its allowed range."""


class DataError(ValueError):
    """Input data is unusable (degenerate image, malformed file, ...)."""


class InputError(ValueError):
    """A numeric input violates the operation's preconditions."""


class NonFiniteGradient(RuntimeError):
    """An optimizer step saw a NaN or infinite gradient."""


class NonFiniteLoss(RuntimeError):
    """The training loss became NaN or infinite; the step must abort."""
