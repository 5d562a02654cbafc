"""Exception hierarchy shared by all modules.

Exit-code mapping (see cli): ParameterError and subclasses -> 2,
AccuracyError/ConvergenceError/TrackingError -> 3, OSError -> 4.
"""


class DwmeltError(Exception):
    """Base class for all package errors."""


class ParameterError(DwmeltError):
    """Invalid parameters, geometry, or configuration."""


class ShapeError(ParameterError):
    """Mismatched lattice sizes, index ranges, or tensor shapes."""


class OperatorLookupError(ParameterError):
    """Operator name not defined for the requested site basis."""


class UnsupportedBasisError(ParameterError):
    """Observable not defined for the state's site basis."""


class VacuumAnnihilationError(ParameterError):
    """Annihilation produced a (numerically) zero state."""


class SpinFlipError(ParameterError):
    """Spin lowering applied to a site with no up-spin weight."""


class InsufficientDataError(ParameterError):
    """A trajectory is missing stored observables needed by an analysis op."""


class AccuracyError(DwmeltError):
    """A time step could not be certified within the fidelity threshold."""

    def __init__(self, msg, residual=None, diagnostics=None):
        super().__init__(msg)
        self.residual = residual
        self.diagnostics = diagnostics


class ConvergenceError(DwmeltError):
    """Iterative ground-state search exhausted its sweep budget."""

    def __init__(self, msg, energy_trace=None):
        super().__init__(msg)
        self.energy_trace = list(energy_trace) if energy_trace is not None else []


class TrackingError(DwmeltError):
    """A front/packet tracer could not follow its feature."""
