class ConfigurationError(ValueError):
    """Invalid target, sampler or experiment configuration."""


class DiagnosticError(ValueError):
    """A diagnostic was asked to work on data it cannot handle."""
