"""Exception types raised across the package."""


class SortJoinError(Exception):
    """Base class for all package errors."""


class ConfigError(SortJoinError, ValueError):
    """Invalid cluster or algorithm configuration (t=0, m <= s, c > m, ...)."""


class SpecError(SortJoinError, ValueError):
    """Invalid dataset generator specification."""


class RoutingError(SortJoinError):
    """A machine program addressed a destination outside 1..t."""


class PlanningError(SortJoinError):
    """Join planning demanded more machines than exist."""


class DatasetParseError(SortJoinError):
    """Malformed dataset file; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
