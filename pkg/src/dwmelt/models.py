"""Site bases, coupling sets, and the three chain Hamiltonians.

Conventions (fixed; operator matrices depend on them):
  * spin-half local basis ordering: (up, down)
  * t-J local basis ordering: (empty, up, down)
  * two-species boson basis: lexicographic (n_up, n_down), index nu*(n_max+1)+nd
  * sites are 0-based internally; CLI/CSV use 1-based site indices
  * open boundary conditions everywhere
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .errors import OperatorLookupError, ParameterError

SPIN_HALF = "spin_half"
TJ = "tj"
BOSON2 = "boson2"


@dataclass(frozen=True)
class SiteBasis:
    """Local Hilbert space of one lattice site.

    ``charges[s]`` is the (n_up, n_down) particle content of local state ``s``;
    for spin-half the two states count as one up / one down particle so that
    magnetization sectors can be handled with the same bookkeeping.
    """

    kind: str
    dim: int
    labels: tuple
    charges: tuple          # tuple of (n_up, n_down) per local state
    n_max: int = 1

    def charge_array(self):
        return np.asarray(self.charges, dtype=np.int64)


def spin_half_basis() -> SiteBasis:
    return SiteBasis(SPIN_HALF, 2, ("up", "down"), ((1, 0), (0, 1)))


def tj_basis() -> SiteBasis:
    return SiteBasis(TJ, 3, ("empty", "up", "down"), ((0, 0), (1, 0), (0, 1)))


def boson2_basis(n_max: int = 2) -> SiteBasis:
    if n_max < 1:
        raise ParameterError(f"n_max must be >= 1, got {n_max}")
    labels = []
    charges = []
    for nu in range(n_max + 1):
        for nd in range(n_max + 1):
            labels.append(f"{nu}u{nd}d")
            charges.append((nu, nd))
    return SiteBasis(BOSON2, (n_max + 1) ** 2, tuple(labels), tuple(charges), n_max)


def _pauli():
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    return sx, sy, sz


def _boson_ladder(n_max):
    """Single-species annihilation matrix on the (n_max+1)-dim Fock space."""
    b = np.zeros((n_max + 1, n_max + 1), dtype=complex)
    for n in range(1, n_max + 1):
        b[n - 1, n] = math.sqrt(n)
    return b


def local_operator(basis: SiteBasis, name: str) -> np.ndarray:
    """Return the dense local matrix for ``name`` in the basis ordering.

    Valid names: S^x S^y S^z S^+ S^- n_up n_down, a_up a_down (t-J hard-core),
    b_up b_down (bosons), n_tot, id.  Spin operators on the t-J basis
    annihilate the empty state; on the boson basis they are the on-site
    bilinears (1/2) b^dag_s [sigma^a]_{ss'} b_s'.
    """
    d = basis.dim
    if name == "id":
        return np.eye(d, dtype=complex)

    if basis.kind == SPIN_HALF:
        sx, sy, sz = _pauli()
        ops = {
            "S^x": sx / 2, "S^y": sy / 2, "S^z": sz / 2,
            "S^+": np.array([[0, 1], [0, 0]], dtype=complex),
            "S^-": np.array([[0, 0], [1, 0]], dtype=complex),
            "n_up": np.diag([1.0, 0.0]).astype(complex),
            "n_down": np.diag([0.0, 1.0]).astype(complex),
            "n_tot": np.eye(2, dtype=complex),
        }
    elif basis.kind == TJ:
        # hard-core species operators; |0> is the empty state
        a_up = np.zeros((3, 3), dtype=complex)
        a_up[0, 1] = 1.0
        a_dn = np.zeros((3, 3), dtype=complex)
        a_dn[0, 2] = 1.0
        sp = a_up.conj().T @ a_dn      # |up><down|
        n_up = np.diag([0.0, 1.0, 0.0]).astype(complex)
        n_dn = np.diag([0.0, 0.0, 1.0]).astype(complex)
        ops = {
            "a_up": a_up, "a_down": a_dn,
            "adag_up": a_up.conj().T, "adag_down": a_dn.conj().T,
            "S^+": sp, "S^-": sp.conj().T,
            "S^x": (sp + sp.conj().T) / 2,
            "S^y": (sp - sp.conj().T) / (2j),
            "S^z": (n_up - n_dn) / 2,
            "n_up": n_up, "n_down": n_dn, "n_tot": n_up + n_dn,
        }
    elif basis.kind == BOSON2:
        m = basis.n_max + 1
        b = _boson_ladder(basis.n_max)
        eye = np.eye(m, dtype=complex)
        b_up = np.kron(b, eye)
        b_dn = np.kron(eye, b)
        n_up = b_up.conj().T @ b_up
        n_dn = b_dn.conj().T @ b_dn
        sp = b_up.conj().T @ b_dn
        ops = {
            "b_up": b_up, "b_down": b_dn,
            "bdag_up": b_up.conj().T, "bdag_down": b_dn.conj().T,
            "S^+": sp, "S^-": sp.conj().T,
            "S^x": (sp + sp.conj().T) / 2,
            "S^y": (sp - sp.conj().T) / (2j),
            "S^z": (n_up - n_dn) / 2,
            "n_up": n_up, "n_down": n_dn, "n_tot": n_up + n_dn,
        }
    else:
        raise OperatorLookupError(f"unknown basis kind {basis.kind!r}")

    try:
        return ops[name]
    except KeyError:
        raise OperatorLookupError(
            f"operator {name!r} not defined for basis {basis.kind!r}") from None


def effective_couplings(t_up, t_down, U_up, U_down, V):
    """Second-order spin couplings (J_perp, J_z, h) of the unity-filling subspace."""
    if U_up <= 0 or U_down <= 0 or V <= 0:
        raise ParameterError("interaction strengths U_up, U_down, V must be positive")
    J_z = 2.0 * (t_up**2 + t_down**2) / V - 4.0 * t_up**2 / U_up - 4.0 * t_down**2 / U_down
    J_perp = -4.0 * t_up * t_down / V
    h = 4.0 * t_up**2 / U_up - 4.0 * t_down**2 / U_down
    return J_perp, J_z, h


@dataclass(frozen=True)
class CouplingSet:
    """Raw Bose-Hubbard parameters together with the derived spin couplings."""

    t_up: float = 0.0
    t_down: float = 0.0
    U_up: float = 0.0
    U_down: float = 0.0
    V: float = 0.0
    mu: float | None = None
    J_perp: float = 0.0
    J_z: float = 0.0
    h: float = 0.0
    delta_V: float = 0.0

    @classmethod
    def from_bh(cls, t_up, t_down, U_up, U_down, V, mu=None):
        J_perp, J_z, h = effective_couplings(t_up, t_down, U_up, U_down, V)
        return cls(t_up, t_down, U_up, U_down, V, mu,
                   J_perp, J_z, h, (U_up + U_down) / 2.0 - V)

    @classmethod
    def isotropic(cls, t, U, mu=None):
        """t_up = t_down = t and U_up = U_down = V = U (the regime of interest)."""
        return cls.from_bh(t, t, U, U, U, mu)

    @classmethod
    def from_spin(cls, J_perp, J_z, h=0.0):
        """Bare XXZ couplings with no underlying boson parameters."""
        return cls(J_perp=J_perp, J_z=J_z, h=h)


@dataclass(frozen=True)
class SymmetrySector:
    """Conserved (n_up, n_down) particle counts of a state."""

    n_up: int
    n_down: int

    def validate(self, basis: SiteBasis, L: int):
        if self.n_up < 0 or self.n_down < 0:
            raise ParameterError(f"negative particle counts in sector {self}")
        cap = L * (basis.n_max if basis.kind == BOSON2 else 1)
        if basis.kind == TJ and self.n_up + self.n_down > L:
            raise ParameterError(f"sector {self} overfills {L} t-J sites")
        if basis.kind == SPIN_HALF and self.n_up + self.n_down != L:
            raise ParameterError(f"spin-half sector must have n_up+n_down = L, got {self}")
        if self.n_up > cap or self.n_down > cap:
            raise ParameterError(f"sector {self} exceeds per-species capacity {cap}")

    def as_tuple(self):
        return (self.n_up, self.n_down)


@dataclass(frozen=True)
class LocalTerm:
    """One Hamiltonian term: coeff times a product of single-site operators.

    ``ops[k]`` acts on site ``start + k``; windows are contiguous and 1-3 wide.
    """

    start: int
    ops: tuple
    coeff: complex
    tag: str = ""

    @property
    def window(self):
        return len(self.ops)

    def window_matrix(self):
        """Dense operator on the window (coefficient not included)."""
        return reduce(np.kron, self.ops)


@dataclass
class HamiltonianRep:
    """A Hamiltonian as a local-term list plus a matrix-product operator on demand."""

    basis: SiteBasis
    L: int
    terms: list
    model: str
    couplings: CouplingSet | None = None
    prep: "PrepSpec | None" = None
    _mpo: object = field(default=None, repr=False)

    @property
    def mpo(self):
        if self._mpo is None:
            from .tensornet import mpo_from_terms
            self._mpo = mpo_from_terms(self.L, self.basis.dim, self.terms)
        return self._mpo

    def dense_matrix(self, max_dim=70000):
        """Expand the term list to a dense matrix (small L only; for tests)."""
        dim = self.basis.dim ** self.L
        if dim > max_dim:
            raise ParameterError(f"dense expansion of dimension {dim} refused")
        H = np.zeros((dim, dim), dtype=complex)
        eye = np.eye(self.basis.dim, dtype=complex)
        for term in self.terms:
            mats = [eye] * self.L
            for k, op in enumerate(term.ops):
                mats[term.start + k] = op
            H += term.coeff * reduce(np.kron, mats)
        return H


@dataclass(frozen=True)
class PrepSpec:
    """Species- and site-dependent chemical potential of the preparation stage."""

    mu: float
    left_species: str = "up"
    right_species: str = "down"


def build_xxz(L, J_perp, J_z) -> HamiltonianRep:
    """Open-boundary spin-1/2 XXZ chain; commutes with total S^z."""
    if L < 2:
        raise ParameterError(f"XXZ chain needs L >= 2, got {L}")
    basis = spin_half_basis()
    sp = local_operator(basis, "S^+")
    sm = local_operator(basis, "S^-")
    sz = local_operator(basis, "S^z")
    terms = []
    for j in range(L - 1):
        terms.append(LocalTerm(j, (sp, sm), J_perp / 2.0, "xxz_pm"))
        terms.append(LocalTerm(j, (sm, sp), J_perp / 2.0, "xxz_mp"))
        terms.append(LocalTerm(j, (sz, sz), J_z, "xxz_zz"))
    return HamiltonianRep(basis, L, terms, "xxz",
                          CouplingSet.from_spin(J_perp, J_z))


def _exchange_terms(basis, L, J_perp, J_z):
    sp = local_operator(basis, "S^+")
    sm = local_operator(basis, "S^-")
    sz = local_operator(basis, "S^z")
    terms = []
    for j in range(L - 1):
        terms.append(LocalTerm(j, (sp, sm), J_perp / 2.0, "xxz_pm"))
        terms.append(LocalTerm(j, (sm, sp), J_perp / 2.0, "xxz_mp"))
        terms.append(LocalTerm(j, (sz, sz), J_z, "xxz_zz"))
    return terms


def build_bh(L, couplings: CouplingSet, n_max=2, prep: PrepSpec | None = None) -> HamiltonianRep:
    """Two-species Bose-Hubbard chain truncated to n_max bosons per species per site.

    With ``prep`` set, subtracts mu * (sum_{j<=L/2} n_{left,j} + sum_{j>L/2} n_{right,j}).
    """
    if L < 2:
        raise ParameterError(f"BH chain needs L >= 2, got {L}")
    if prep is not None and L % 2 != 0:
        raise ParameterError("preparation potential needs even L (half-and-half split)")
    basis = boson2_basis(n_max)
    b_up = local_operator(basis, "b_up")
    b_dn = local_operator(basis, "b_down")
    n_up = local_operator(basis, "n_up")
    n_dn = local_operator(basis, "n_down")
    terms = []
    for j in range(L - 1):
        terms.append(LocalTerm(j, (b_up.conj().T, b_up), -couplings.t_up, "hop_up"))
        terms.append(LocalTerm(j, (b_up, b_up.conj().T), -couplings.t_up, "hop_up"))
        terms.append(LocalTerm(j, (b_dn.conj().T, b_dn), -couplings.t_down, "hop_down"))
        terms.append(LocalTerm(j, (b_dn, b_dn.conj().T), -couplings.t_down, "hop_down"))
    for j in range(L):
        onsite = (couplings.U_up / 2.0) * (n_up @ n_up - n_up) \
            + (couplings.U_down / 2.0) * (n_dn @ n_dn - n_dn) \
            + couplings.V * (n_up @ n_dn)
        terms.append(LocalTerm(j, (onsite,), 1.0, "onsite"))
    if prep is not None:
        species = {"up": n_up, "down": n_dn}
        for j in range(L):
            n_op = species[prep.left_species] if j < L // 2 else species[prep.right_species]
            terms.append(LocalTerm(j, (n_op,), -prep.mu, "prep_mu"))
    return HamiltonianRep(basis, L, terms, "bh", couplings, prep)


def build_tj(L, couplings: CouplingSet, include_three_site=True) -> HamiltonianRep:
    """Hard-core boson t-J chain: direct hopping + XXZ exchange + 3-site terms.

    The three 3-site families move a boson by two lattice sites with amplitudes
    t_s^2/V (over the other species), t_up*t_down/V (exchange-assisted), and
    2 t_s^2/U_s (over the same species).
    """
    if L < 2 or (include_three_site and L < 3):
        raise ParameterError(f"t-J chain needs L >= {3 if include_three_site else 2}")
    basis = tj_basis()
    a_up = local_operator(basis, "a_up")
    a_dn = local_operator(basis, "a_down")
    n_up = local_operator(basis, "n_up")
    n_dn = local_operator(basis, "n_down")
    sp = local_operator(basis, "S^+")
    sm = local_operator(basis, "S^-")
    c = couplings
    terms = []
    for j in range(L - 1):
        terms.append(LocalTerm(j, (a_up.conj().T, a_up), -c.t_up, "hop_up"))
        terms.append(LocalTerm(j, (a_up, a_up.conj().T), -c.t_up, "hop_up"))
        terms.append(LocalTerm(j, (a_dn.conj().T, a_dn), -c.t_down, "hop_down"))
        terms.append(LocalTerm(j, (a_dn, a_dn.conj().T), -c.t_down, "hop_down"))
    terms += _exchange_terms(basis, L, c.J_perp, c.J_z)
    if include_three_site:
        fam_a = [(a_up, n_dn, -c.t_up**2 / c.V, "3site_a_up"),
                 (a_dn, n_up, -c.t_down**2 / c.V, "3site_a_down")]
        for a_op, n_op, amp, tag in fam_a:
            for j in range(L - 2):
                terms.append(LocalTerm(j, (a_op.conj().T, n_op, a_op), amp, tag))
                terms.append(LocalTerm(j, (a_op, n_op, a_op.conj().T), amp, tag))
        amp_b = -c.t_up * c.t_down / c.V
        for j in range(L - 2):
            # sigma = up: adag_down S^+ a_up, plus h.c.; sigma = down likewise
            terms.append(LocalTerm(j, (a_dn.conj().T, sp, a_up), amp_b, "3site_b_up"))
            terms.append(LocalTerm(j, (a_dn, sm, a_up.conj().T), amp_b, "3site_b_up"))
            terms.append(LocalTerm(j, (a_up.conj().T, sm, a_dn), amp_b, "3site_b_down"))
            terms.append(LocalTerm(j, (a_up, sp, a_dn.conj().T), amp_b, "3site_b_down"))
        fam_c = [(a_up, n_up, -2.0 * c.t_up**2 / c.U_up, "3site_c_up"),
                 (a_dn, n_dn, -2.0 * c.t_down**2 / c.U_down, "3site_c_down")]
        for a_op, n_op, amp, tag in fam_c:
            for j in range(L - 2):
                terms.append(LocalTerm(j, (a_op.conj().T, n_op, a_op), amp, tag))
                terms.append(LocalTerm(j, (a_op, n_op, a_op.conj().T), amp, tag))
    return HamiltonianRep(basis, L, terms, "tj", c)
