"""Exception taxonomy shared by all modules."""


class CapillaryError(Exception):
    """Base class for all solver errors."""


class DegenerateCurve(CapillaryError):
    """A boundary curve lost its immersion (|dη/dy| too small) or self-degenerated."""


class NodeCountMismatch(CapillaryError):
    """A boundary field was sampled on a different node set than the curve."""


class InvertibilityLost(CapillaryError):
    """det ∇η dropped to zero or below somewhere; the flow map is no longer a diffeomorphism."""


class BasisDegenerate(CapillaryError):
    """Gram-Schmidt hit a pivot below tolerance while orthonormalizing the velocity basis."""


class SolverFailure(CapillaryError):
    """An elliptic or mixed linear solve stagnated or was singular."""


class SingularStepMatrix(CapillaryError):
    """The implicit time-step matrix is singular (dt too large for the assembled spectrum)."""


class CompatibilityViolation(CapillaryError):
    """Initial data violates the tangential-stress compatibility condition."""


class NoContraction(CapillaryError):
    """Successive-approximation differences grew for several consecutive iterates."""


class HorizonTooLarge(CapillaryError):
    """Geometric controls (normal alignment or det a >= 1/2) failed before the requested horizon."""


class OutsideTrustRegion(CapillaryError):
    """A candidate iterate left the configured trust region (X-norm above M_cap)."""


class OffsetNotTangential(CapillaryError):
    """A difference-quotient offset has a component along the lattice normal."""


class UnknownScenario(CapillaryError):
    """Config named a scenario this package does not ship."""


class ParseError(CapillaryError):
    """Config file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ValidationError(CapillaryError):
    """Config parsed but a field failed validation; carries the field name."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class IoError(CapillaryError):
    """Output path could not be written."""
