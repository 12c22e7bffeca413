"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad shapes, hyperparameters or config keys."""


class UsageError(ValueError):
    """A call violated a documented precondition (bad argument value)."""
