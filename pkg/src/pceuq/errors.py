"""Exception hierarchy and warning categories used across the package."""


class PceuqError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PceuqError):
    """Invalid argument, inconsistent problem data, or malformed input document."""


class ArithmeticOverflowError(PceuqError):
    """A combinatorial count exceeds the representable integer range."""


class QuadratureError(PceuqError):
    """Failure while constructing a quadrature rule."""


class EvaluationError(PceuqError):
    """An integrand returned a non-finite value at a quadrature node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class AccuracyError(PceuqError):
    """A refinement loop stopped before reaching the requested accuracy."""

    def __init__(self, message, estimates=None):
        super().__init__(message)
        self.estimates = estimates


class ResourceLimitError(PceuqError):
    """A requested computation exceeds a configured size cap."""


class InfeasibleError(PceuqError):
    """The feasible set of a quadratic program is empty."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class DegeneracyError(PceuqError):
    """Active-constraint gradients are linearly dependent (LICQ violation)."""

    def __init__(self, message, realization=None):
        super().__init__(message)
        self.realization = realization


class UnsupportedConfigError(PceuqError):
    """The requested operation is not defined for this configuration."""


class SynthesisError(PceuqError):
    """Controller synthesis could not find a stabilizing solution."""


class NumericsWarning(UserWarning):
    """Benign numerical adjustment, e.g. clamping a slightly negative radicand."""
