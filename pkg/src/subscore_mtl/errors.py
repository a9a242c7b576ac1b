"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: ConfigError -> 1 (usage),
DataError -> 2 (data), NumericError -> 3 (numeric failure).
"""


class SubscoreError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SubscoreError):
    """Invalid configuration, argument, or precondition violation."""


class DataError(SubscoreError):
    """Problem with an on-disk artifact: manifest, volume file, checkpoint."""


class NumericError(SubscoreError):
    """Numeric failure: training divergence, gradient check above threshold."""
