"""Error taxonomy shared across the package and mapped to CLI exit codes."""


class ConfigError(Exception):
    """Invalid configuration, paths or file contents (CLI exit code 2)."""


class NumericalError(Exception):
    """Non-finite data or a failed numerical operation (CLI exit code 3)."""
