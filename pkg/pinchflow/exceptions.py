from typing import Any, Optional


class PinchflowException(Exception):
    pass


class AdmissibilityError(PinchflowException):
    pass


class RangeError(PinchflowException):
    pass


class DegenerateTorusError(PinchflowException):
    pass


class ConstructionError(PinchflowException):
    pass


class ResolutionError(PinchflowException):
    pass


class NotApplicable(PinchflowException):
    pass


class ConfigurationError(PinchflowException):
    pass


class PinchflowCLIError(PinchflowException):
    pass


class SingularityEvent(PinchflowException):
    def __init__(self, t: float, max_A_sq: float, *args: Any) -> None:
        self.t = t
        self.max_A_sq = max_A_sq
        super().__init__(*args)

    def __str__(self) -> str:
        return f"Singularity at t={self.t!r} with max|A|^2={self.max_A_sq!r}"


class InvariantViolation(PinchflowException):
    def __init__(self, message: str, state: Optional[Any] = None) -> None:
        self.state = state
        super().__init__(message)
