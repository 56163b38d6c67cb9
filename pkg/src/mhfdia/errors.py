class ConfigError(ValueError):
    """Invalid configuration, dimensions or scenario parameters."""


class NumericalError(ArithmeticError):
    """A numerical routine produced non-finite or inconsistent values."""
