"""Exception types shared across the package."""


class DriftlessError(Exception):
    """Base class for all package errors."""


class GridDomainError(DriftlessError, ValueError):
    """A strike or maturity falls outside the surface grid span."""


class InvalidSurfaceError(DriftlessError, ValueError):
    """A surface contains non-finite or otherwise unusable values."""


class ArbitrageError(DriftlessError, ValueError):
    """A call-price grid admits static arbitrage (imaginary local vol)."""

    def __init__(self, msg, node=None):
        super().__init__(msg)
        self.node = node


class SingularSystemError(DriftlessError, ValueError):
    """A linear system encountered a zero pivot."""


class ClassicArbitrageError(DriftlessError, ValueError):
    """Outcomes are one-signed: no finite utility maximizer exists."""


class FitError(DriftlessError, ValueError):
    """Regression failure (rank-deficient design matrix)."""


class SimulationError(DriftlessError, RuntimeError):
    """Path simulation failed (e.g. vol ceiling exceeded repeatedly)."""


class TrainingError(DriftlessError, RuntimeError):
    """Gradient training failed (non-finite objective or gradient)."""


class TiltError(DriftlessError, ValueError):
    """The requested tilt entropy is unreachable for the given direction."""


class UtilityDomainError(DriftlessError, ValueError):
    """Argument outside the domain of a utility transform."""
