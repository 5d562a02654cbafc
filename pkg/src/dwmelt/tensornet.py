"""Dense-tensor MPS/MPO kernels.

Tensors are complex128 with index order (left bond, physical, right bond) for
MPS and (left bond, right bond, phys out, phys in) for MPO.  Truncation always
works on normalized Schmidt spectra; discarded weight is the sum of squared
discarded coefficients of the unit-normalized state.  Singular values below
1e-14 (relative) are always dropped as numerical noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ParameterError, ShapeError

NOISE_FLOOR = 1e-14


def svd_safe(mat):
    """SVD with a divide-and-conquer -> standard-driver fallback."""
    try:
        return sla.svd(mat, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        return sla.svd(mat, full_matrices=False, lapack_driver="gesvd")


@dataclass
class CompressionReport:
    """Accounting of one budgeted truncation."""

    discarded_weight: float = 0.0
    max_bond: int = 1
    per_bond: list = field(default_factory=list)

    @property
    def fidelity_lower_bound(self):
        return 1.0 - self.discarded_weight

    def merge(self, other):
        return CompressionReport(self.discarded_weight + other.discarded_weight,
                                 max(self.max_bond, other.max_bond))


class MPS:
    """Finite chain matrix-product state (open boundaries)."""

    def __init__(self, tensors, center=None, spectra=None):
        self.tensors = list(tensors)
        self.center = center
        self.spectra = spectra          # list of per-bond Schmidt arrays, or None

    @property
    def L(self):
        return len(self.tensors)

    @property
    def d(self):
        return self.tensors[0].shape[1]

    def bond_dims(self):
        return [t.shape[2] for t in self.tensors[:-1]]

    def max_bond(self):
        return max(self.bond_dims(), default=1)

    def copy(self):
        return MPS([t.copy() for t in self.tensors], self.center,
                   None if self.spectra is None else [s.copy() for s in self.spectra])

    def scale(self, c):
        out = self.copy()
        out.tensors[-1] = out.tensors[-1] * c
        out.spectra = None
        return out

    def norm(self):
        return float(np.sqrt(np.real(overlap(self, self))))

    def normalized(self):
        n = self.norm()
        if n < 1e-300:
            raise ParameterError("cannot normalize a zero state")
        return self.scale(1.0 / n)

    @classmethod
    def from_product(cls, local_vectors):
        tensors = [np.asarray(v, dtype=complex).reshape(1, -1, 1) for v in local_vectors]
        return cls(tensors, center=0, spectra=[np.array([1.0])] * (len(tensors) - 1))

    @classmethod
    def random(cls, L, d, chi, seed):
        rng = np.random.default_rng(seed)
        tensors = []
        left = 1
        for j in range(L):
            right = min(chi, d ** (j + 1), d ** (L - 1 - j)) if j < L - 1 else 1
            shp = (left, d, right)
            tensors.append(rng.standard_normal(shp) + 1j * rng.standard_normal(shp))
            left = right
        return cls(tensors).normalized()


def overlap(a: MPS, b: MPS) -> complex:
    """<a|b> (a is conjugated)."""
    if a.L != b.L:
        raise ShapeError("overlap of states with different lengths")
    env = np.ones((1, 1), dtype=complex)
    for ta, tb in zip(a.tensors, b.tensors):
        tmp = np.tensordot(env, tb, axes=(1, 0))        # (la, s, rb)
        env = np.tensordot(ta.conj(), tmp, axes=([0, 1], [0, 1]))  # (ra, rb)
    return complex(env[0, 0])


def canonicalize(mps: MPS, center: int) -> MPS:
    """Left-canonical left of center, right-canonical right of it (QR sweeps)."""
    if not 0 <= center < mps.L:
        raise ParameterError(f"center {center} outside chain of length {mps.L}")
    ts = [t.copy() for t in mps.tensors]
    for j in range(center):
        l, d, r = ts[j].shape
        q, rr = np.linalg.qr(ts[j].reshape(l * d, r))
        ts[j] = q.reshape(l, d, -1)
        ts[j + 1] = np.tensordot(rr, ts[j + 1], axes=(1, 0))
    for j in range(mps.L - 1, center, -1):
        l, d, r = ts[j].shape
        q, rr = np.linalg.qr(ts[j].reshape(l, d * r).conj().T)
        ts[j] = q.conj().T.reshape(-1, d, r)
        ts[j - 1] = np.tensordot(ts[j - 1], rr.conj().T, axes=(2, 0))
    return MPS(ts, center=center)


def _truncation_cut(s, allowance, max_bond=None):
    """How many singular values to keep given a normalized-weight allowance."""
    total = float(np.dot(s, s))
    if total <= 0:
        return 1
    rel2 = (s * s) / total
    tail = np.cumsum(rel2[::-1])[::-1]      # tail[k] = weight of s[k:]
    keep = len(s)
    for k in range(len(s) - 1, 0, -1):
        floor_cut = s[k] < NOISE_FLOOR * s[0]
        if tail[k] <= allowance or floor_cut:
            keep = k
        else:
            break
    if max_bond is not None:
        keep = min(keep, max_bond)
    return max(keep, 1)


def schmidt_sweep(mps: MPS):
    """Right-canonicalize, then one SVD sweep; returns (mps, norm, spectra).

    The returned state is left-canonical with the norm carried by the last
    tensor; spectra are the exact normalized Schmidt values per bond.
    """
    m = canonicalize(mps, 0)
    ts = m.tensors
    spectra = []
    nrm = None
    for j in range(m.L - 1):
        l, d, r = ts[j].shape
        u, s, vh = svd_safe(ts[j].reshape(l * d, r))
        if nrm is None:
            nrm = float(np.linalg.norm(s))
        sn = float(np.linalg.norm(s))
        spectra.append(s / (sn if sn > 0 else 1.0))
        ts[j] = u.reshape(l, d, -1)
        ts[j + 1] = np.tensordot((s[:, None] * vh), ts[j + 1], axes=(1, 0))
    last = ts[-1]
    n_last = float(np.linalg.norm(last))
    nrm = n_last if nrm is None else nrm
    out = MPS(ts, center=m.L - 1, spectra=spectra)
    return out, nrm


def compress_norm(mps: MPS, weight_budget, max_bond=None):
    """Budgeted two-pass truncation; returns (unit-norm MPS, norm, report).

    Pass 1 measures the exact Schmidt spectra; the budget is then distributed
    over bonds proportionally to how much weight each bond could discard on
    its own, and pass 2 cuts with those per-bond allowances.
    """
    if weight_budget < 0:
        raise ParameterError("weight budget must be >= 0")
    m, nrm = schmidt_sweep(mps)
    if nrm < 1e-300:
        raise ParameterError("cannot compress a zero state")
    ts = m.tensors
    L = m.L
    disc = []
    for s in m.spectra:
        rel2 = s * s
        tail = np.cumsum(rel2[::-1])[::-1]
        best = 0.0
        for k in range(len(s) - 1, 0, -1):
            if tail[k] <= weight_budget:
                best = tail[k]
            else:
                break
        disc.append(best)
    total_disc = sum(disc)
    allow = [weight_budget * (dv / total_disc) if total_disc > 0 else 0.0 for dv in disc]
    # pass 2: sweep right-to-left cutting with the allowances
    discarded = 0.0
    per_bond = [0.0] * (L - 1)
    spectra = [None] * (L - 1)
    mx = 1
    for j in range(L - 1, 0, -1):
        l, d, r = ts[j].shape
        u, s, vh = svd_safe(ts[j].reshape(l, d * r))
        keep = _truncation_cut(s, allow[j - 1], max_bond)
        w = float(np.sum(s[keep:] ** 2) / max(np.sum(s**2), 1e-300))
        discarded += w
        per_bond[j - 1] = w
        sk = s[:keep]
        spectra[j - 1] = sk / max(np.linalg.norm(sk), 1e-300)
        ts[j] = vh[:keep].reshape(-1, d, r)
        ts[j - 1] = np.tensordot(ts[j - 1], u[:, :keep] * sk[None, :], axes=(2, 0))
        mx = max(mx, keep)
    n0 = float(np.linalg.norm(ts[0]))
    ts[0] = ts[0] / max(n0, 1e-300)
    out = MPS(ts, center=0, spectra=spectra)
    report = CompressionReport(discarded, mx, per_bond)
    return out, nrm * n0, report


def compress(mps: MPS, weight_budget, max_bond=None):
    """Spec-facing wrapper: budgeted truncation of a normalized state."""
    out, _norm, report = compress_norm(mps, weight_budget, max_bond)
    return out, report


class Mpo:
    """Matrix-product operator; tensors (wl, wr, phys_out, phys_in)."""

    def __init__(self, tensors):
        self.tensors = list(tensors)

    @property
    def L(self):
        return len(self.tensors)

    @property
    def d(self):
        return self.tensors[0].shape[2]

    def bond_dims(self):
        return [t.shape[1] for t in self.tensors[:-1]]


def mpo_identity(L, d):
    eye = np.eye(d, dtype=complex).reshape(1, 1, d, d)
    return Mpo([eye.copy() for _ in range(L)])


def mpo_from_terms(L, d, terms) -> Mpo:
    """Compile a list of LocalTerm-like objects into an MPO.

    Channels are shared by operator suffix, so e.g. all terms ending in the
    same annihilation operator reuse one bond slot.
    """
    READY, DONE = 0, 1
    slot_maps = [dict() for _ in range(L - 1)]   # per bond: suffix key -> slot
    entries = [dict() for _ in range(L)]         # per site: (l, r) -> matrix

    def add_entry(site, l, r, mat):
        key = (l, r)
        if key in entries[site]:
            entries[site][key] = entries[site][key] + mat
        else:
            entries[site][key] = mat.astype(complex).copy()

    def ensure_channel(bond, suffix):
        """Slot at ``bond`` that will emit ``suffix`` on the following sites."""
        key = tuple((off, m.tobytes()) for off, m in suffix)
        if key in slot_maps[bond]:
            return slot_maps[bond][key]
        slot = 2 + len(slot_maps[bond])
        slot_maps[bond][key] = slot
        off, mat = suffix[0]
        assert off == 0, "non-contiguous operator strings are not supported"
        site = bond + 1
        rest = [(o - 1, m) for o, m in suffix[1:]]
        if rest:
            nxt = ensure_channel(site, rest)
            add_entry(site, slot, nxt, mat)
        else:
            add_entry(site, slot, DONE, mat)
        return slot

    for term in terms:
        a = term.start
        ops = [np.asarray(m, dtype=complex) for m in term.ops]
        if a < 0 or a + len(ops) > L:
            raise ShapeError(f"term window [{a}, {a + len(ops)}) outside chain")
        first = term.coeff * ops[0]
        if len(ops) == 1:
            add_entry(a, READY, DONE, first)
        else:
            suffix = [(k - 1, ops[k]) for k in range(1, len(ops))]
            ch = ensure_channel(a, suffix)
            add_entry(a, READY, ch, first)

    eye = np.eye(d, dtype=complex)
    for j in range(L):
        if j < L - 1:
            add_entry(j, READY, READY, eye)
        if j > 0:
            add_entry(j, DONE, DONE, eye)

    bdims = [1] + [2 + len(sm) for sm in slot_maps] + [1]
    tensors = []
    for j in range(L):
        wl = bdims[j]
        wr = bdims[j + 1]
        W = np.zeros((wl, wr, d, d), dtype=complex)
        for (l, r), mat in entries[j].items():
            li = 0 if j == 0 else l
            ri = 0 if j == L - 1 else r
            if j == 0 and l != READY:
                continue
            if j == L - 1 and r != DONE:
                continue
            W[li, ri] += mat
        tensors.append(W)
    return Mpo(tensors)


def mpo_to_dense(mpo: Mpo, max_dim=70000):
    d = mpo.d
    dim = d ** mpo.L
    if dim > max_dim:
        raise ParameterError(f"dense MPO expansion of dimension {dim} refused")
    out = np.ones((1, 1, 1), dtype=complex)   # (w, out, in)
    for W in mpo.tensors:
        out = np.einsum("apq,abrs->bprqs", out, W).reshape(
            W.shape[1], out.shape[1] * d, out.shape[2] * d)
    return out[0]


def apply_mpo(mpo: Mpo, mps: MPS) -> MPS:
    """Exact MPO x MPS product (bond dimensions multiply)."""
    if mpo.L != mps.L or mpo.d != mps.d:
        raise ShapeError("MPO/MPS geometry mismatch")
    ts = []
    for W, A in zip(mpo.tensors, mps.tensors):
        T = np.tensordot(W, A, axes=([3], [1]))     # (wl, wr, p, l, r)
        T = T.transpose(0, 3, 2, 1, 4)              # (wl, l, p, wr, r)
        wl, l, p, wr, r = T.shape
        ts.append(T.reshape(wl * l, p, wr * r))
    return MPS(ts)


def zipup_apply(mpo: Mpo, mps: MPS, weight_budget, max_bond=None):
    """MPO application with on-the-fly truncation (zip-up), then a canonical
    truncation pass.  Returns (mps, norm, report); output has unit norm.

    Half the budget is spread over the zip-up bonds (where discarded weights
    are only approximately Schmidt weights because the right block is not yet
    isometric), half goes to the final exact pass.
    """
    if mpo.L != mps.L or mpo.d != mps.d:
        raise ShapeError("MPO/MPS geometry mismatch")
    L = mps.L
    m = canonicalize(mps, 0)          # right-canonical: safest zip-up gauge
    zip_allow = 0.5 * weight_budget / max(L - 1, 1)
    C = np.ones((1, 1, 1), dtype=complex)       # (a, wl, l)
    ts = []
    discarded = 0.0
    mx = 1
    for j in range(L):
        W = mpo.tensors[j]
        A = m.tensors[j]
        T = np.tensordot(C, A, axes=([2], [0]))          # (a, wl, s, r)
        T = np.tensordot(T, W, axes=([1, 2], [0, 3]))    # (a, r, wr, p)
        T = T.transpose(0, 3, 2, 1)                      # (a, p, wr, r)
        a, p, wr, r = T.shape
        if j == L - 1:
            ts.append(T.reshape(a, p, wr * r))
            break
        u, s, vh = svd_safe(T.reshape(a * p, wr * r))
        keep = _truncation_cut(s, zip_allow, max_bond)
        w = float(np.sum(s[keep:] ** 2) / max(np.sum(s**2), 1e-300))
        discarded += w
        mx = max(mx, keep)
        ts.append(u[:, :keep].reshape(a, p, keep))
        C = (s[:keep, None] * vh[:keep]).reshape(keep, wr, r)
    rough = MPS(ts, center=L - 1)
    out, nrm, rep2 = compress_norm(rough, 0.5 * weight_budget, max_bond)
    report = CompressionReport(discarded + rep2.discarded_weight,
                               max(mx, rep2.max_bond))
    return out, nrm, report


def linear_combination(parts, weight_budget, max_bond=None):
    """Compressed sum c_0 |m_0> + c_1 |m_1> + ... via pairwise adds.

    Each pairwise add is an exact bond direct sum followed by a budgeted
    truncation (budget per add = weight_budget).  Returns (mps, norm, report),
    the state unit-normalized.
    """
    parts = [(c, m) for c, m in parts if abs(c) > 0]
    if not parts:
        raise ParameterError("empty linear combination")
    # accumulate smallest coefficients first to protect them from truncation
    parts = sorted(parts, key=lambda cm: abs(cm[0]))
    acc = parts[0][1].scale(parts[0][0])
    total_report = CompressionReport(0.0, acc.max_bond())
    acc_norm = 1.0
    for c, m in parts[1:]:
        summed = _direct_sum(acc.scale(acc_norm), m.scale(c))
        acc, acc_norm, rep = compress_norm(summed, weight_budget, max_bond)
        total_report = total_report.merge(rep)
    return acc, acc_norm, total_report


def _direct_sum(a: MPS, b: MPS) -> MPS:
    if a.L != b.L or a.d != b.d:
        raise ShapeError("adding states with mismatched geometry")
    L = a.L
    ts = []
    for j in range(L):
        ta, tb = a.tensors[j], b.tensors[j]
        la, d, ra = ta.shape
        lb, _, rb = tb.shape
        if L == 1:
            ts.append(ta + tb)
            continue
        if j == 0:
            T = np.zeros((1, d, ra + rb), dtype=complex)
            T[:, :, :ra] = ta
            T[:, :, ra:] = tb
        elif j == L - 1:
            T = np.zeros((la + lb, d, 1), dtype=complex)
            T[:la] = ta
            T[la:] = tb
        else:
            T = np.zeros((la + lb, d, ra + rb), dtype=complex)
            T[:la, :, :ra] = ta
            T[la:, :, ra:] = tb
        ts.append(T)
    return MPS(ts)


def expectation_product(mps: MPS, ops) -> complex:
    """<psi| prod_k O_k(site_k) |psi> / <psi|psi| for distinct sites."""
    by_site = {}
    for site, mat in ops:
        if site in by_site:
            by_site[site] = np.asarray(mat, dtype=complex) @ by_site[site]
        else:
            by_site[site] = np.asarray(mat, dtype=complex)
        if site < 0 or site >= mps.L:
            raise ShapeError(f"operator site {site} out of range")
    env = np.ones((1, 1), dtype=complex)
    nrm = np.ones((1, 1), dtype=complex)
    for j, A in enumerate(mps.tensors):
        if j in by_site:
            Aop = np.tensordot(by_site[j], A, axes=([1], [1])).transpose(1, 0, 2)
        else:
            Aop = A
        tmp = np.tensordot(env, Aop, axes=(1, 0))
        env = np.tensordot(A.conj(), tmp, axes=([0, 1], [0, 1]))
        tmpn = np.tensordot(nrm, A, axes=(1, 0))
        nrm = np.tensordot(A.conj(), tmpn, axes=([0, 1], [0, 1]))
    return complex(env[0, 0] / nrm[0, 0])


def expectation_mpo(mps: MPS, mpo: Mpo) -> complex:
    """<psi| MPO |psi> / <psi|psi>."""
    env = np.ones((1, 1, 1), dtype=complex)     # (bra, w, ket)
    nrm = np.ones((1, 1), dtype=complex)
    for A, W in zip(mps.tensors, mpo.tensors):
        tmp = np.tensordot(env, A, axes=([2], [0]))          # (bra, w, s, r)
        tmp = np.tensordot(tmp, W, axes=([1, 2], [0, 3]))    # (bra, r, wr, p)
        env = np.tensordot(A.conj(), tmp, axes=([0, 1], [0, 3]))  # (rbra, r, wr)
        env = env.transpose(0, 2, 1)
        tmpn = np.tensordot(nrm, A, axes=(1, 0))
        nrm = np.tensordot(A.conj(), tmpn, axes=([0, 1], [0, 1]))
    return complex(env[0, 0, 0] / nrm[0, 0])


def mps_to_full(mps: MPS, max_dim=2_000_000):
    dim = mps.d ** mps.L
    if dim > max_dim:
        raise ParameterError(f"full-space expansion of dimension {dim} refused")
    vec = np.ones((1, 1), dtype=complex)
    for A in mps.tensors:
        vec = np.tensordot(vec, A, axes=([1], [0]))
        vec = vec.reshape(-1, A.shape[2])
    return vec.reshape(-1)


def mps_from_full(vec, L, d):
    vec = np.asarray(vec, dtype=complex)
    if vec.size != d ** L:
        raise ShapeError("vector length does not match d**L")
    ts = []
    rest = vec.reshape(1, -1)
    left = 1
    for j in range(L - 1):
        mat = rest.reshape(left * d, -1)
        u, s, vh = svd_safe(mat)
        keep = int(np.sum(s > NOISE_FLOOR * max(s[0], 1e-300)))
        keep = max(keep, 1)
        ts.append(u[:, :keep].reshape(left, d, keep))
        rest = s[:keep, None] * vh[:keep]
        left = keep
    ts.append(rest.reshape(left, d, 1))
    return MPS(ts, center=L - 1)


def entanglement_spectra(mps: MPS):
    """Normalized Schmidt values at every bond."""
    m, _ = schmidt_sweep(mps)
    return m.spectra


def entropy_from_spectrum(s):
    p = np.asarray(s, dtype=float) ** 2
    p = p[p > 1e-300]
    p = p / p.sum()
    return float(-np.sum(p * np.log(p)))
