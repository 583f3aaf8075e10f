"""Exception types raised across the package.

Each failure mode named in the library API gets its own class so callers can
catch precisely what they expect. All derive from :class:`FFStabError`.
"""

from __future__ import annotations


class FFStabError(Exception):
    """Base class for every error raised by ffstab."""


class InvalidSiteError(FFStabError, ValueError):
    pass


class RegionError(FFStabError, ValueError):
    pass


class CapacityError(FFStabError):
    """A requested dense object exceeds the configured dimension cap."""


class EmbeddingError(FFStabError, ValueError):
    pass


class DomainError(FFStabError, ValueError):
    pass


class PartitionError(FFStabError):
    pass


class DecayCertificationError(FFStabError):
    pass


class SymmetryError(FFStabError, ValueError):
    pass


class ConvergenceError(FFStabError):
    pass


class AmbiguousThresholdError(FFStabError):
    pass


class AmbiguousGapError(FFStabError):
    pass


class EmptyGroundspaceError(FFStabError):
    pass


class FilterGapError(FFStabError):
    pass


class FlowRankError(FFStabError):
    pass


class StepTooLargeError(FFStabError):
    pass


class CommutationError(FFStabError):
    pass


class DecompositionError(FFStabError):
    pass


class DegenerateGapError(FFStabError):
    pass


class ScheduleError(FFStabError, ValueError):
    pass


class EnumerationCapacityError(FFStabError):
    pass


class Ell0UndefinedError(FFStabError):
    """No row of a TQO profile satisfies the area-law threshold."""


class ConfigError(FFStabError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class StageError(FFStabError):
    """A pipeline stage aborted; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
