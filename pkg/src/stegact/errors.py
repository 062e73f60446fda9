"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericsError -> 3.
"""


class DimensionError(ValueError):
    """A tensor has the wrong rank, an odd length on a transformed axis, or
    mismatched shapes between operands."""


class ConfigError(ValueError):
    """An invalid configuration value or combination."""


class DataError(RuntimeError):
    """Dataset ingestion failed (missing/unreadable files, bad manifest)."""


class NumericsError(RuntimeError):
    """Training aborted on a non-finite loss."""
