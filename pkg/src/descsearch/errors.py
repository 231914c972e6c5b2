"""Shared exception types."""


class DescsearchError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DescsearchError):
    """Invalid, unknown, or inconsistent configuration value."""


class CapacityError(DescsearchError):
    """A requested materialization would exceed the configured feature budget."""
