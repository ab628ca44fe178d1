"""Exception hierarchy shared by the thermal modules."""
from typing import Optional


class ThermalError(Exception):
    """Base class for every error raised by the toolkit."""

    code = "thermal_error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class ModelValidationError(ThermalError):
    """A model or scenario file failed to parse or violates an invariant."""

    code = "model_validation"

    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}" if detail else invariant)

    def to_dict(self) -> dict:
        return {**super().to_dict(), "invariant": self.invariant}


class ShapeError(ThermalError, ValueError):
    code = "shape"


class DomainError(ThermalError, ValueError):
    code = "domain"


class ContractViolation(ThermalError):
    code = "contract_violation"


class ConvergenceError(ThermalError):
    code = "convergence"


class SingularJacobianError(ThermalError):
    code = "singular_jacobian"

    def __init__(self, message: str, condition: Optional[float] = None):
        self.condition = condition
        super().__init__(f"{message} (condition estimate {condition:.3e})" if condition is not None else message)


class DegenerateLeakageError(ThermalError):
    code = "degenerate_leakage"


class FitError(ThermalError):
    code = "fit"


class NoCandidateError(ThermalError):
    code = "no_candidate"


class SeparatrixError(ThermalError):
    code = "separatrix"
