"""Exception hierarchy shared by the library, the command line and the HTTP service."""

from typing import Any, Dict


class IFSError(Exception):
    """Base error. ``detail`` must stay JSON serializable."""

    exit_code = 1

    def __init__(self, message: str, /, **detail: Any):
        super().__init__(message)
        self.message = message
        self.detail = detail

    def to_diagnostic(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "detail": self.detail,
        }


class UsageError(IFSError):
    exit_code = 2


class DimensionMismatchError(IFSError):
    pass


class EmptyCloudError(IFSError):
    pass


class CoveringError(IFSError):
    """Raised when a region is not covered; ``detail["witnesses"]`` lists grid points."""


class NotContractingError(IFSError):
    pass


class NotAbsorbingError(IFSError):
    pass


class BudgetExceededError(IFSError):
    pass


class ParameterSearchError(IFSError):
    pass


class SingularMapError(IFSError):
    pass


class DomainError(IFSError):
    pass


class BranchError(IFSError):
    pass


class WindowExhaustedError(IFSError):
    pass


def check_dimension(expected: int, actual: int, what: str = "point") -> None:
    if expected != actual:
        raise DimensionMismatchError(
            f"{what} has dimension {actual}, expected {expected}",
            expected=expected,
            actual=actual,
        )


class VerificationError(IFSError):
    """A check ran to completion and failed; ``detail`` names what failed."""
