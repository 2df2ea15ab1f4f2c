"""Exception hierarchy for the forecaster."""


class FlowcastError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FlowcastError):
    """Invalid configuration value or combination."""


class DataError(FlowcastError):
    """Dataset missing, malformed, or failing its integrity checks."""


class EmptyTestSet(FlowcastError):
    """Evaluation requested on a split with no samples."""
