"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value; the message names the offending field."""


class DegenerateInputError(ValueError):
    """Measurements or fitted parameters leave a quantity unidentifiable."""
