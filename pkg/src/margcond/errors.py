"""Exception hierarchy.

Errors split into two families so the CLI can map them onto exit codes:
``InputError`` for malformed or out-of-range arguments and
``StatisticalError`` for data that violates a statistical precondition.
"""


class MargCondError(Exception):
    """Base class for all package errors."""


class InputError(MargCondError, ValueError):
    """Bad arguments, configuration or file contents."""


class StatisticalError(MargCondError, ValueError):
    """The data cannot support the requested computation."""


class NotSymmetric(InputError):
    pass


class ConfigError(InputError):
    pass


class UnknownAlpha(ConfigError):
    pass


class NotPositiveDefinite(StatisticalError):
    pass


class TooFewSamples(StatisticalError):
    pass


class RankDeficient(StatisticalError):
    pass


class DomainError(StatisticalError):
    pass


class SimulationError(StatisticalError):
    """Too many degenerate replicates in a simulation run."""
