"""Initial states: domain walls, hole/spin-flip defects, prepared BH ground states.

States come in two representations sharing one interface: ``DenseState``
(sector-resolved amplitude vector) and ``MpsState`` (matrix-product state).
Defect constructors work on either and normalize their output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import tensornet as tn
from .dense import (FactorizedBhOperator, GenericSpace, ProductSpace,
                    dense_operator, space_for)
from .errors import (ConvergenceError, ParameterError, SpinFlipError,
                     UnsupportedBasisError, VacuumAnnihilationError)
from .models import (BOSON2, SPIN_HALF, TJ, HamiltonianRep, SiteBasis,
                     SymmetrySector, local_operator)


class DenseState:
    """Normalized sector-resolved state vector."""

    rep = "dense"

    def __init__(self, space, vec, normalize=True):
        vec = np.asarray(vec, dtype=complex)
        if vec.shape != (space.dim,):
            raise ParameterError("vector length does not match sector dimension")
        if normalize:
            n = np.linalg.norm(vec)
            if n < 1e-12:
                raise ParameterError("cannot normalize a numerically zero state")
            vec = vec / n
        self.space = space
        self.vec = vec

    @property
    def basis(self):
        return self.space.basis

    @property
    def L(self):
        return self.space.L

    @property
    def sector(self):
        return self.space.sector

    def norm(self):
        return float(np.linalg.norm(self.vec))

    def copy(self):
        out = DenseState.__new__(DenseState)
        out.space = self.space
        out.vec = self.vec.copy()
        return out


class MpsState:
    """Normalized matrix-product state tagged with its basis and sector."""

    rep = "mps"

    def __init__(self, basis: SiteBasis, mps: tn.MPS, sector: SymmetrySector,
                 normalize=True):
        if mps.d != basis.dim:
            raise ParameterError("MPS physical dimension does not match basis")
        self.basis = basis
        self.mps = mps.normalized() if normalize else mps
        self.sector = sector

    @property
    def L(self):
        return self.mps.L

    def norm(self):
        return self.mps.norm()

    def copy(self):
        return MpsState(self.basis, self.mps.copy(), self.sector, normalize=False)


def _local_index(basis: SiteBasis, label):
    if basis.kind == SPIN_HALF:
        table = {"up": 0, "down": 1}
    elif basis.kind == TJ:
        table = {"empty": 0, "up": 1, "down": 2}
    else:
        table = {"empty": 0, "up": basis.n_max + 1, "down": 1}
    try:
        return table[label]
    except KeyError:
        raise ParameterError(f"unknown site label {label!r} for {basis.kind}") from None


def _pattern_sector(basis, indices):
    ch = basis.charge_array()
    n_up = int(ch[indices, 0].sum())
    n_down = int(ch[indices, 1].sum())
    return SymmetrySector(n_up, n_down)


def product_state(basis: SiteBasis, L, labels, rep="dense"):
    """Product state from per-site labels ('up', 'down', 'empty')."""
    if len(labels) != L:
        raise ParameterError("need one label per site")
    indices = np.array([_local_index(basis, lab) for lab in labels], dtype=np.int8)
    sector = _pattern_sector(basis, indices)
    if rep == "mps":
        vecs = []
        for idx in indices:
            v = np.zeros(basis.dim)
            v[idx] = 1.0
            vecs.append(v)
        return MpsState(basis, tn.MPS.from_product(vecs), sector, normalize=False)
    space = space_for(basis, L, sector)
    if isinstance(space, ProductSpace):
        ch = basis.charge_array()
        vec = space.basis_vector(ch[indices])
    else:
        vec = space.sb.basis_vector(indices)
    return DenseState(space, vec, normalize=False)


def wall_labels(L):
    return ["up"] * (L // 2) + ["down"] * (L - L // 2)


def polarized_labels(L, species="up"):
    return [species] * L


def domain_wall(basis: SiteBasis, L, rep="dense"):
    """|up ... up down ... down> with the wall between sites L/2 and L/2+1."""
    if L % 2 != 0:
        raise ParameterError(f"domain wall needs even L, got {L}")
    return product_state(basis, L, wall_labels(L), rep)


def _apply_local_mps(state: MpsState, site, mat, new_sector, err):
    mps = state.mps.copy()
    A = mps.tensors[site]
    mps.tensors[site] = np.tensordot(np.asarray(mat, dtype=complex), A,
                                     axes=([1], [1])).transpose(1, 0, 2)
    mps.spectra = None
    n = mps.norm()
    if n < 1e-12:
        raise err
    return MpsState(state.basis, mps.scale(1.0 / n), new_sector, normalize=False)


def apply_hole(state, site):
    """Remove one up particle at ``site`` (0-based); returns a normalized state."""
    basis = state.basis
    if basis.kind == SPIN_HALF:
        raise UnsupportedBasisError("spin-half sites cannot host holes")
    if not 0 <= site < state.L:
        raise ParameterError(f"hole site {site} outside chain")
    sec = state.sector
    new_sector = SymmetrySector(sec.n_up - 1, sec.n_down)
    if new_sector.n_up < 0:
        raise VacuumAnnihilationError("no up particles left to remove")
    err = VacuumAnnihilationError(f"annihilation at site {site} gives a zero state")
    name = "a_up" if basis.kind == TJ else "b_up"
    if state.rep == "mps":
        return _apply_local_mps(state, site, local_operator(basis, name),
                                new_sector, err)
    if isinstance(state.space, ProductSpace):
        vec, tgt = state.space.annihilate(state.vec, "up", site)
    else:
        tgt = GenericSpace(basis, state.L, new_sector)
        vec = state.space.apply_product(state.vec,
                                        [(site, local_operator(basis, name))], tgt)
    if np.linalg.norm(vec) < 1e-12:
        raise err
    return DenseState(tgt, vec)


def apply_spin_flip(state, site):
    """Replace the up particle at ``site`` by a down one (S^- there)."""
    basis = state.basis
    if not 0 <= site < state.L:
        raise ParameterError(f"flip site {site} outside chain")
    sec = state.sector
    new_sector = SymmetrySector(sec.n_up - 1, sec.n_down + 1)
    if new_sector.n_up < 0:
        raise SpinFlipError("no up particles left to flip")
    err = SpinFlipError(f"spin flip at site {site} gives a zero state")
    if state.rep == "mps":
        return _apply_local_mps(state, site, local_operator(basis, "S^-"),
                                new_sector, err)
    if isinstance(state.space, ProductSpace):
        vec, mid = state.space.annihilate(state.vec, "up", site)
        vec, tgt = mid.create(vec, "down", site)
    else:
        tgt = GenericSpace(basis, state.L, new_sector)
        vec = state.space.apply_product(state.vec,
                                        [(site, local_operator(basis, "S^-"))], tgt)
    if np.linalg.norm(vec) < 1e-12:
        raise err
    return DenseState(tgt, vec)


def _fix_phase_dense(vec):
    k = int(np.argmax(np.abs(vec)))
    ph = vec[k] / abs(vec[k])
    return vec * np.conj(ph)


@dataclass
class GroundOpts:
    """Knobs of the variational ground-state search."""

    e_tol: float = 1e-10
    max_sweeps: int = 40
    trunc_weight: float = 1e-14
    max_bond: int | None = None
    eigsh_tol: float = 1e-12


def prepare_bh_ground(H: HamiltonianRep, sector, method="dense-eigensolver",
                      opts: GroundOpts | None = None):
    """Lowest state of the preparation Hamiltonian in the half/half sector."""
    if H.prep is None:
        raise ParameterError("prepare_bh_ground needs a Hamiltonian built with prep")
    if not isinstance(sector, SymmetrySector):
        sector = SymmetrySector(*sector)
    if sector.n_up != H.L // 2 or sector.n_down != H.L // 2:
        raise ParameterError(f"preparation sector must be (L/2, L/2), got {sector}")
    opts = opts or GroundOpts()
    if method == "dense-eigensolver":
        return _ground_dense(H, sector, opts)
    if method == "variational-sweeps":
        return _ground_dmrg(H, sector, opts)
    raise ParameterError(f"unknown ground-state method {method!r}")


def _ground_dense(H, sector, opts):
    space = space_for(H.basis, H.L, sector)
    op = dense_operator(H, space)
    if isinstance(op, FactorizedBhOperator):
        def mv(v):
            P = v.reshape(space.shape2)
            out = op.A_up.dot(P) + op.A_dn.dot(P.T).T + op.V_mat * P
            return out.reshape(-1)
        lo = spla.LinearOperator((space.dim, space.dim), matvec=mv, dtype=np.float64)
    else:
        mat = op.mat.real
        lo = spla.LinearOperator((space.dim, space.dim), matvec=mat.dot,
                                 dtype=np.float64)
    ch = H.basis.charge_array()
    wall_idx = np.array([_local_index(H.basis, lab) for lab in wall_labels(H.L)],
                        dtype=np.int8)
    if isinstance(space, ProductSpace):
        v0 = space.basis_vector(ch[wall_idx]).real
    else:
        v0 = space.sb.basis_vector(wall_idx).real
    vals, vecs = spla.eigsh(lo, k=1, which="SA", v0=v0, tol=opts.eigsh_tol)
    vec = _fix_phase_dense(vecs[:, 0].astype(complex))
    state = DenseState(space, vec)
    state.energy = float(vals[0])
    return state


def _ground_dmrg(H, sector, opts):
    psi0 = product_state(H.basis, H.L, wall_labels(H.L), rep="mps")
    mps, energies = dmrg_minimize(H.mpo, psi0.mps, opts)
    # global phase: positive overlap with the product wall
    ov = tn.overlap(psi0.mps, mps)
    if abs(ov) > 1e-12:
        mps = mps.scale(np.conj(ov / abs(ov)))
    state = MpsState(H.basis, mps, sector)
    state.energy = energies[-1]
    state.energy_trace = energies
    return state


def dmrg_minimize(mpo: tn.Mpo, mps0: tn.MPS, opts: GroundOpts):
    """Two-site variational sweeps; returns (state, per-sweep energy trace)."""
    L = mps0.L
    if L < 2:
        raise ParameterError("DMRG needs at least two sites")
    psi = tn.canonicalize(mps0.normalized(), 0)
    W = mpo.tensors
    right = [None] * (L + 1)
    right[L] = np.ones((1, 1, 1), dtype=complex)
    for j in range(L - 1, 1, -1):
        right[j] = _env_right(right[j + 1], psi.tensors[j], W[j])
    left = [None] * L
    left[0] = np.ones((1, 1, 1), dtype=complex)

    energies = []
    last = np.inf
    for sweep in range(opts.max_sweeps):
        e_sweep = None
        for j in range(L - 1):
            e_sweep = _two_site_update(psi, W, left, right, j, opts, sweep_dir=+1)
        for j in range(L - 2, -1, -1):
            e_sweep = _two_site_update(psi, W, left, right, j, opts, sweep_dir=-1)
        energies.append(e_sweep)
        if abs(e_sweep - last) < opts.e_tol:
            return psi, energies
        last = e_sweep
    raise ConvergenceError(
        f"DMRG did not converge in {opts.max_sweeps} sweeps", energy_trace=energies)


def _env_left(env, A, W):
    tmp = np.tensordot(env, A, axes=([2], [0]))            # (bra, w, s, r)
    tmp = np.tensordot(tmp, W, axes=([1, 2], [0, 3]))      # (bra, r, wr, p)
    out = np.tensordot(A.conj(), tmp, axes=([0, 1], [0, 3]))   # (rbra, r, wr)
    return out.transpose(0, 2, 1)


def _env_right(env, A, W):
    tmp = np.tensordot(A, env, axes=([2], [2]))            # (l, s, bra, w)
    tmp = np.tensordot(tmp, W, axes=([3, 1], [1, 3]))      # (l, bra, wl, p)
    out = np.tensordot(tmp, A.conj(), axes=([1, 3], [2, 1]))   # (l, wl, lbra)
    return out.transpose(2, 1, 0)


def _two_site_update(psi, W, left, right, j, opts, sweep_dir):
    A1, A2 = psi.tensors[j], psi.tensors[j + 1]
    theta = np.tensordot(A1, A2, axes=([2], [0]))          # (l, d, e, r)
    shape = theta.shape
    Le, Re = left[j], right[j + 2]
    W1, W2 = W[j], W[j + 1]

    def hop(x):
        th = x.reshape(shape)
        t = np.tensordot(Le, th, axes=([2], [0]))          # (bl, w, d, e, r)
        t = np.tensordot(t, W1, axes=([1, 2], [0, 3]))     # (bl, e, r, w1, p)
        t = np.tensordot(t, W2, axes=([3, 1], [0, 3]))     # (bl, r, p, w2, q)
        t = np.tensordot(t, Re, axes=([3, 1], [1, 2]))     # (bl, p, q, br)
        return t.reshape(-1)

    n = theta.size
    lo = spla.LinearOperator((n, n), matvec=hop, dtype=complex)
    v0 = theta.reshape(-1)
    if n <= 8:
        dense = np.array([hop(e) for e in np.eye(n, dtype=complex)]).T
        vals, vecs = np.linalg.eigh((dense + dense.conj().T) / 2)
        e0, gs = float(vals[0]), vecs[:, 0]
    else:
        vals, vecs = spla.eigsh(lo, k=1, which="SA", v0=v0, tol=opts.eigsh_tol)
        e0, gs = float(vals[0]), vecs[:, 0]
    theta = gs.reshape(shape)
    l, d, e, r = shape
    u, s, vh = tn.svd_safe(theta.reshape(l * d, e * r))
    keep = tn._truncation_cut(s, opts.trunc_weight, opts.max_bond)
    sk = s[:keep] / np.linalg.norm(s[:keep])
    if sweep_dir > 0:
        psi.tensors[j] = u[:, :keep].reshape(l, d, keep)
        psi.tensors[j + 1] = (sk[:, None] * vh[:keep]).reshape(keep, e, r)
        left[j + 1] = _env_left(left[j], psi.tensors[j], W[j])
    else:
        psi.tensors[j] = (u[:, :keep] * sk[None, :]).reshape(l, d, keep)
        psi.tensors[j + 1] = vh[:keep].reshape(keep, e, r)
        right[j + 1] = _env_right(right[j + 2], psi.tensors[j + 1], W[j + 1])
    return e0


def mps_sector_amplitudes(mps: tn.MPS, configs):
    """Amplitudes of an MPS on a batch of occupation configurations."""
    configs = np.asarray(configs)
    N = configs.shape[0]
    v = np.ones((N, 1), dtype=complex)
    for j, A in enumerate(mps.tensors):
        T = A[:, configs[:, j], :]                  # (l, N, r)
        v = np.einsum("nl,lnr->nr", v, T)
    return v[:, 0]


def state_overlap(a, b) -> complex:
    """<a|b> across representations (dense side defines the sector grid)."""
    if a.rep == "mps" and b.rep == "mps":
        return tn.overlap(a.mps, b.mps)
    if a.rep == "dense" and b.rep == "dense":
        if a.sector != b.sector:
            return 0.0 + 0.0j
        return complex(np.vdot(a.vec, b.vec))
    dense, mps_state, conj = (a, b, False) if a.rep == "dense" else (b, a, True)
    space = dense.space
    if isinstance(space, ProductSpace):
        nmax = space.basis.n_max
        iu = space.sb_up.states.astype(np.int64)
        idn = space.sb_dn.states.astype(np.int64)
        Du, Dd = space.shape2
        joint = (iu[:, None, :] * (nmax + 1) + idn[None, :, :]).reshape(Du * Dd, space.L)
        amps = mps_sector_amplitudes(mps_state.mps, joint)
    else:
        amps = mps_sector_amplitudes(mps_state.mps, space.sb.states)
    ov = complex(np.vdot(dense.vec, amps))
    return np.conj(ov) if conj else ov
