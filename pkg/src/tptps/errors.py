class ConfigError(ValueError):
    """Raised when a configuration or lexicon file is unusable."""
