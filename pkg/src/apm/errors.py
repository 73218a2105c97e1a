class ConfigError(ValueError):
    """Invalid configuration or mismatched inputs (CLI exit code 2)."""


class DataError(ValueError):
    """Unreadable or malformed dataset (CLI exit code 3)."""
