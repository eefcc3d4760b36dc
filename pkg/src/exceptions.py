"""Exception hierarchy for network identification."""

from __future__ import annotations


class NetidentError(Exception):
    """Base class for all library errors."""


class DegeneratePolynomialError(NetidentError):
    """Polynomial has no nonzero coefficient or degree 0 where roots are asked."""


class RootOnUnitCircleError(NetidentError):
    """A root lies within tolerance of the unit circle."""


class ZeroTrailingCoefficientError(NetidentError):
    """Highest-lag coefficient is zero, mirror polynomial is undefined."""


class PoleOnUnitCircleError(NetidentError):
    """Frequency response requested at a pole on the unit circle."""


class KernelDomainError(NetidentError):
    """Kernel hyperparameters outside beta in [0, 1), lambda >= 0."""


class DegenerateKernelError(NetidentError):
    """Kernel is singular (lambda = 0 or beta = 0) and cannot be inverted."""


class InvalidNetworkError(NetidentError):
    """Network fails validation and cannot be simulated."""


class NetworkValidationError(InvalidNetworkError):
    """Parsed network config fails validation."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DimensionMismatchError(NetidentError):
    """Setup and data dimensions disagree."""


class InvalidDataError(NetidentError):
    """Node data contains non-finite samples or has the wrong shape."""


class IllConditionedError(NetidentError):
    """Factorization failed even after jitter."""

    def __init__(self, message: str, condition: float = float("inf")):
        self.condition = condition
        super().__init__(f"{message} (condition estimate {condition:.3e})")


class SingularNormalEquationsError(NetidentError):
    """Normal equations for theta are rank deficient."""

    def __init__(self, rank: int, size: int):
        self.rank = rank
        self.size = size
        super().__init__(f"normal equations rank {rank} < {size}")


class NonpositiveVarianceError(NetidentError):
    """Noise variance update produced a nonpositive value."""


class NearZeroLeadingDenominatorError(NetidentError):
    """Series division by a sequence with (near) zero leading term."""


class UnstablePredictorError(NetidentError):
    """Predictor filter has poles on or outside the unit circle."""


class ConstantTruthError(NetidentError):
    """Fit metric undefined for a constant reference vector."""


class ConfigParseError(NetidentError):
    """Network config file could not be parsed."""


class UnknownCaseError(NetidentError):
    """Requested built-in case does not exist."""
