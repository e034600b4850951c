"""Exception types shared across the toolkit."""


class SingularWavevectorError(ValueError):
    """Wavevector magnitude below the representable threshold."""


class DegeneratePairError(ValueError):
    """Velocity pair with |v1 - v2| below the representable threshold."""


class ScreeningSingularError(RuntimeError):
    """Screening modulus dipped below the validity floor of the expansion."""


class OutOfDomainError(ValueError):
    """Query outside the domain of a tabulated quantity."""


class UnsupportedOrderError(ValueError):
    """Derivative order beyond the supported finite-difference stencils."""


class ResolventSolveError(RuntimeError):
    """Iterative resolvent application failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StepRejectedError(RuntimeError):
    """Requested time step violates the stability policy."""


class PicardDivergenceError(RuntimeError):
    """Fixed-point sweep error ratio stayed at or above one."""

    def __init__(self, message, ratio=None):
        super().__init__(message)
        self.ratio = ratio


class StateInvalidError(RuntimeError):
    """Evolved state left the admissible set (e.g. positivity loss)."""
