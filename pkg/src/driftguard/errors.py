"""Exception hierarchy shared by every module."""


class DriftguardError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DriftguardError):
    """A configuration value is missing, malformed, or inconsistent."""


class DataError(DriftguardError):
    """Input data violates a contract (bad file, broken invariant, degenerate size)."""
