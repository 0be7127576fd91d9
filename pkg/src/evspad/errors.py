"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes (config 2, data 3, solver 4), so new
error types should subclass one of the three roots.
"""


class EvspadError(Exception):
    pass


class ConfigError(EvspadError):
    """Invalid or inconsistent run configuration."""


class DataError(EvspadError):
    """Malformed, missing, or out-of-contract input data."""


class SaturationError(DataError):
    """Flux or response beyond the invertible range of the sensor model."""


class SolverError(EvspadError):
    """Numerical solver failed to bracket or converge."""
