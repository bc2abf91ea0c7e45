"""Error types shared across the package.

ConfigurationError marks problems the user can fix before anything runs
(bad layout, inconsistent options); it maps to exit code 1 in the CLI.
Everything else (data corruption, numerical failures) maps to exit code 2.
"""


class ConfigurationError(Exception):
    """Invalid configuration, CLI arguments, or dataset layout."""


class UnsupportedImageError(RuntimeError):
    """Image has a channel layout the pipeline cannot process."""


class DegenerateStatsError(RuntimeError):
    """Normalization statistics unusable (zero standard deviation)."""
