"""Exception types shared across the package."""


class FeatnetError(Exception):
    """Base class for package errors."""


class ConfigError(FeatnetError):
    """Invalid or malformed experiment configuration (CLI exit code 2)."""


class DivergenceError(FeatnetError):
    """Iterate norm blew past the divergence guard (CLI exit code 3)."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class TopologyError(FeatnetError):
    """Graph construction failed (e.g. no connected draw within retries)."""
