"""Exception types shared across the package."""


class PricesimError(Exception):
    """Base class for package errors."""


class ConfigError(PricesimError):
    """Invalid configuration (bad instance/policy/run parameters)."""


class EstimationError(PricesimError):
    """An estimator failed to produce a finite result."""


class MetricError(PricesimError):
    """A summary metric is undefined for the given data."""
