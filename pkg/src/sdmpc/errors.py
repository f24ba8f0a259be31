"""Exception types shared across the package."""


class SdmpcError(Exception):
    """Base class for all package errors."""


class InfeasibleStateError(SdmpcError, ValueError):
    """The state lies outside ``X`` (``U(x)`` is empty)."""


class DivergenceError(SdmpcError, ArithmeticError):
    """A trajectory left every bounded region (state norm above the cap)."""


class InfeasibleOCPError(SdmpcError):
    """No admissible control was found for an optimal control problem.

    ``max_violation`` is the smallest worst-case constraint residual reached.
    """

    def __init__(self, message, max_violation=float("nan"), solution=None):
        super().__init__(message)
        self.max_violation = max_violation
        self.solution = solution


class NotStabilizableError(SdmpcError):
    """The Riccati equation has no stabilizing solution."""


class DomainError(SdmpcError, ValueError):
    """Inputs outside the domain of a certification formula."""


class EmptyRegionError(SdmpcError, ValueError):
    """A sampling region is empty."""


class OutsideKernelError(SdmpcError, ValueError):
    """A point expected inside the viability kernel lies outside it."""


class ConstraintActiveError(SdmpcError):
    """A reference rollout violated the constraints."""


class ConstructionError(SdmpcError):
    """A constructive bound failed because one of its rollouts was infeasible."""
