"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised when a configuration object or file is internally inconsistent."""


class ContractViolation(RuntimeError):
    """Raised when an operation is invoked outside its stated preconditions."""


class DivergenceError(RuntimeError):
    """Raised when a training run produces non-finite or runaway quantities."""
