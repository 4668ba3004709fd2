"""Exception hierarchy shared by all crowdfuse modules."""


class CrowdfuseError(Exception):
    """Base class for every error raised by this package."""


class EmptyInput(CrowdfuseError, ValueError):
    pass


class DegeneratePair(CrowdfuseError, ValueError):
    pass


class GridMismatch(CrowdfuseError, ValueError):
    pass


class EmptyTracks(CrowdfuseError, ValueError):
    pass


class OverlapMismatch(CrowdfuseError, ValueError):
    pass


class CategoryMismatch(CrowdfuseError, ValueError):
    pass


class InvalidTransition(CrowdfuseError, RuntimeError):
    pass


class AlreadyAggregated(InvalidTransition):
    pass


class NotAggregated(InvalidTransition):
    pass


class NotSubmitted(InvalidTransition):
    pass


class NoEligibleTasks(CrowdfuseError, LookupError):
    pass


class SchemaError(CrowdfuseError, ValueError):
    pass


class JobValidationError(CrowdfuseError, ValueError):
    """Raised by ``validate_job``; ``errors`` lists every ``(code, message)``."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{code}: {msg}" for code, msg in self.errors))

    @property
    def codes(self):
        return [code for code, _ in self.errors]
