class ConfigError(ValueError):
    """Invalid configuration or out-of-range parameter. CLI exit code 2."""

    exit_code = 2


class DataError(ValueError):
    """Malformed or missing input data. CLI exit code 3."""

    exit_code = 3
