"""Exception types and the process exit-code map shared across the package."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_BREAKDOWN = 3
EXIT_NONCONVERGED = 4
EXIT_VERIFICATION = 5


class HktflowError(Exception):
    """Base class for errors raised by this package."""


class MalformedInputError(HktflowError):
    """Input violates a structural precondition (shape, symmetry, range)."""


class NumericalDegeneracyError(HktflowError):
    """Eigenvalue pairing of the complex adjoint failed beyond tolerance."""


class AdmissibilityError(HktflowError):
    """Eigenvalues left the operator's cone somewhere on the grid.

    Carries the violating margin and, when available, the grid point at
    which the worst violation occurred, to support step-rejection logic.
    """

    def __init__(self, message, margin=None, point=None):
        super().__init__(message)
        self.margin = margin
        self.point = point


class FlowBreakdownError(HktflowError):
    """Repeated time-step rejection; the discrete flow left the cone."""

    def __init__(self, message, t=None, margin=None):
        super().__init__(message)
        self.t = t
        self.margin = margin


class ConfigError(HktflowError):
    """Experiment configuration is invalid; message names the field path."""


class CheckpointError(HktflowError):
    """Checkpoint blob is unreadable (magic/version/length mismatch)."""


class InvalidBError(HktflowError):
    """The shift B does not make d(phi)/dt + B positive throughout."""


class DiagnosticsError(HktflowError):
    """A diagnostics window is empty or otherwise unusable."""


class VerificationError(HktflowError):
    """An oracle or elliptic verification suite failed."""
