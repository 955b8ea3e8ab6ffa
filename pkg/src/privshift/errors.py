"""Exception hierarchy for the privshift package.

Two broad families matter to callers: ``ConfigError`` for invalid
configuration or input schemas, and ``NumericalError`` for procedures that
fail on otherwise valid input. The CLI maps them to exit codes 2 and 3.
"""


class PrivshiftError(Exception):
    """Base class for all privshift errors."""


class ConfigError(PrivshiftError):
    """Invalid configuration, flags, or input schema."""


class InvalidBudget(ConfigError):
    """Privacy budget parameters outside their valid domain."""


class TooFewRows(ConfigError):
    """Not enough rows to perform the requested computation."""


class NumericalError(PrivshiftError):
    """A numerical procedure failed on otherwise valid input."""


class DegenerateColumn(NumericalError):
    """A column is numerically constant where variation is required."""


class SingularSystem(NumericalError):
    """A linear system could not be solved, even after ridge fallback."""


class EmptyArm(NumericalError):
    """A treatment arm has no units."""


class Infeasible(NumericalError):
    """Calibration constraints cannot be met (target outside the convex hull)."""


class AllReplicatesFailed(NumericalError):
    """Every bootstrap replicate failed."""


class DegenerateSample(NumericalError):
    """A simulated draw produced an unusable sample (e.g. an empty arm)."""
