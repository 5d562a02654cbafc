"""dwmelt: desk-scale domain-wall melting in two-species boson chains.

Three model families (spin-1/2 XXZ, two-species Bose-Hubbard, hard-core
boson t-J with three-site terms), sector-exact dense evolution as the oracle
path, matrix-product-state Krylov evolution with a per-step fidelity
threshold, the paper-level observables (profiles, correlators, currents,
entropies), and the shifted-average defect predictions.
"""

from .errors import (AccuracyError, ConvergenceError, DwmeltError,
                     InsufficientDataError, OperatorLookupError,
                     ParameterError, ShapeError, SpinFlipError, TrackingError,
                     UnsupportedBasisError, VacuumAnnihilationError)
from .models import (CouplingSet, HamiltonianRep, LocalTerm, PrepSpec,
                     SiteBasis, SymmetrySector, boson2_basis, build_bh,
                     build_tj, build_xxz, effective_couplings, local_operator,
                     spin_half_basis, tj_basis)

__all__ = [
    "AccuracyError", "ConvergenceError", "DwmeltError", "InsufficientDataError",
    "OperatorLookupError", "ParameterError", "ShapeError", "SpinFlipError",
    "TrackingError", "UnsupportedBasisError", "VacuumAnnihilationError",
    "CouplingSet", "HamiltonianRep", "LocalTerm", "PrepSpec", "SiteBasis",
    "SymmetrySector", "boson2_basis", "build_bh", "build_tj", "build_xxz",
    "effective_couplings", "local_operator", "spin_half_basis", "tj_basis",
]

__version__ = "0.1.0"
