"""Sector-resolved exact-state machinery (the oracle path).

States live in a fixed (n_up, n_down) symmetry sector.  Basis configurations
are enumerated lexicographically (site 0 most significant) and encoded as
base-d integer keys when they fit in int64; larger lattices with small
sectors fall back to a bytes-keyed dictionary.

A *space* owns the sector basis and all measurements; an *operator* owns a
Hamiltonian action on a space.  The two-species Bose-Hubbard sector
factorizes as (up configurations) x (down configurations), so its space
stores the two species bases and its operator is two small sparse blocks
plus a diagonal coupling matrix; the generic path assembles one sparse
matrix from the term list.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, ShapeError, UnsupportedBasisError
from .models import (BOSON2, HamiltonianRep, SiteBasis, SymmetrySector,
                     _boson_ladder, local_operator)

_INT64_LIMIT = 2**62


def _count_table(charges, L, n_up, n_down):
    """ways[j, a, b] = completions of sites j..L-1 using a up / b down particles."""
    ways = np.zeros((L + 1, n_up + 1, n_down + 1), dtype=np.int64)
    ways[L, 0, 0] = 1
    for j in range(L - 1, -1, -1):
        for (cu, cd) in charges:
            src = ways[j + 1]
            if cu <= n_up and cd <= n_down:
                ways[j, cu:, cd:] += src[:n_up + 1 - cu, :n_down + 1 - cd]
    return ways


class SectorBasis:
    """All occupation configurations of one symmetry sector, in key order."""

    def __init__(self, basis: SiteBasis, L: int, sector):
        if not isinstance(sector, SymmetrySector):
            sector = SymmetrySector(*sector)
        if basis.kind != "boson1":
            sector.validate(basis, L)
        self.basis = basis
        self.L = L
        self.sector = sector
        self.d = basis.dim
        charges = [tuple(c) for c in basis.charges]
        ways = _count_table(charges, L, sector.n_up, sector.n_down)
        n_states = int(ways[0, sector.n_up, sector.n_down])
        if n_states == 0:
            raise ParameterError(f"sector {sector} is empty for L={L}")
        self.size = n_states
        if self.d ** L < _INT64_LIMIT:
            self._weights = np.array([self.d ** (L - 1 - j) for j in range(L)],
                                     dtype=np.int64)
            self._enumerate_vectorized(charges, ways)
            self._bytes_index = None
        else:
            self._weights = None
            self._enumerate_recursive(charges, ways)
        cu = basis.charge_array()
        self.occ_up = cu[self.states, 0].astype(np.int8)
        self.occ_dn = cu[self.states, 1].astype(np.int8)

    def _enumerate_vectorized(self, charges, ways):
        keys = np.zeros(1, dtype=np.int64)
        nu = np.array([self.sector.n_up], dtype=np.int64)
        nd = np.array([self.sector.n_down], dtype=np.int64)
        for j in range(self.L):
            w = int(self._weights[j])
            parts = []
            for s, (cu, cd) in enumerate(charges):
                nu2 = nu - cu
                nd2 = nd - cd
                ok = (nu2 >= 0) & (nd2 >= 0)
                if not ok.any():
                    continue
                cnt = ways[j + 1][nu2[ok], nd2[ok]]
                keep = cnt > 0
                parts.append((keys[ok][keep] + s * w, nu2[ok][keep], nd2[ok][keep]))
            keys = np.concatenate([p[0] for p in parts])
            nu = np.concatenate([p[1] for p in parts])
            nd = np.concatenate([p[2] for p in parts])
        order = np.argsort(keys, kind="stable")
        self.keys = keys[order]
        digits = np.empty((self.size, self.L), dtype=np.int8)
        rem = self.keys.copy()
        for j in range(self.L):
            w = int(self._weights[j])
            digits[:, j] = rem // w
            rem = rem % w
        self.states = digits

    def _enumerate_recursive(self, charges, ways):
        rows = []
        cur = np.zeros(self.L, dtype=np.int8)

        def fill(j, a, b):
            if j == self.L:
                rows.append(cur.copy())
                return
            for s, (cu, cd) in enumerate(charges):
                a2, b2 = a - cu, b - cd
                if a2 >= 0 and b2 >= 0 and ways[j + 1, a2, b2] > 0:
                    cur[j] = s
                    fill(j + 1, a2, b2)

        fill(0, self.sector.n_up, self.sector.n_down)
        self.states = np.array(rows, dtype=np.int8)
        self.keys = None
        self._bytes_index = {r.tobytes(): i for i, r in enumerate(self.states)}

    def index_of(self, config) -> int:
        config = np.asarray(config, dtype=np.int8)
        if config.shape != (self.L,):
            raise ShapeError("configuration length mismatch")
        if self.keys is not None:
            key = int(np.dot(config.astype(np.int64), self._weights))
            pos = int(np.searchsorted(self.keys, key))
            if pos >= self.size or self.keys[pos] != key:
                raise ParameterError("configuration not in sector")
            return pos
        try:
            return self._bytes_index[config.tobytes()]
        except KeyError:
            raise ParameterError("configuration not in sector") from None

    def lookup_keys(self, keys):
        pos = np.searchsorted(self.keys, keys)
        if np.any(pos >= self.size) or np.any(self.keys[pos] != keys):
            raise ParameterError("operator output left the target sector")
        return pos

    def basis_vector(self, config):
        vec = np.zeros(self.size, dtype=complex)
        vec[self.index_of(config)] = 1.0
        return vec


def _charge_of_matrix(basis, mat):
    """The unique (d n_up, d n_down) a matrix adds; error if mixed."""
    cu = basis.charge_array()
    rows, cols = np.nonzero(np.abs(mat) > 1e-15)
    if len(rows) == 0:
        return (0, 0)
    deltas = {(int(cu[r, 0] - cu[c, 0]), int(cu[r, 1] - cu[c, 1]))
              for r, c in zip(rows, cols)}
    if len(deltas) != 1:
        raise ParameterError("operator mixes charge sectors; decompose it first")
    return deltas.pop()


def product_charge(basis, ops):
    du = dd = 0
    for _site, mat in ops:
        cu, cd = _charge_of_matrix(basis, mat)
        du += cu
        dd += cd
    return du, dd


def product_matrix(sb_out: SectorBasis, sb_in: SectorBasis, products):
    """Sparse matrix of sum_k coeff_k * prod_m mat_{k,m}(site_{k,m}).

    Each product is ``(coeff, [(site, matrix), ...])`` with distinct sites and
    must map sb_in's sector into sb_out's (charge-pure factors).
    """
    from functools import reduce

    d = sb_in.d
    L = sb_in.L
    rows_all, cols_all, vals_all = [], [], []
    is_real = True
    sort_cache = {}
    for coeff, ops in products:
        ops = sorted(ops, key=lambda x: x[0])
        sites = [s for s, _ in ops]
        if len(set(sites)) != len(sites):
            raise ParameterError("product factors must act on distinct sites")
        if any(s < 0 or s >= L for s in sites):
            raise ShapeError(f"site out of range in product at sites {sites}")
        combined = reduce(np.kron, [np.asarray(m, dtype=complex) for _, m in ops])
        if np.abs(combined.imag).max() > 0 or abs(complex(coeff).imag) > 0:
            is_real = False
        k = len(sites)
        key_sites = tuple(sites)
        if key_sites not in sort_cache:
            wc = np.zeros(sb_in.size, dtype=np.int64)
            for s in sites:
                wc = wc * d + sb_in.states[:, s].astype(np.int64)
            order = np.argsort(wc, kind="stable")
            sort_cache[key_sites] = (order, wc[order])
        order, wc_sorted = sort_cache[key_sites]
        nz_r, nz_c = np.nonzero(np.abs(combined) > 1e-15)
        for r, c in zip(nz_r, nz_c):
            lo = np.searchsorted(wc_sorted, c, side="left")
            hi = np.searchsorted(wc_sorted, c, side="right")
            if lo == hi:
                continue
            in_idx = order[lo:hi]
            val = coeff * combined[r, c]
            if sb_in.keys is not None and sb_out.keys is not None:
                dkey = 0
                rr, cc = int(r), int(c)
                for m in range(k - 1, -1, -1):
                    dkey += ((rr % d) - (cc % d)) * int(sb_in._weights[sites[m]])
                    rr //= d
                    cc //= d
                out_idx = sb_out.lookup_keys(sb_in.keys[in_idx] + dkey)
            else:
                digits_r = []
                rr = int(r)
                for _ in range(k):
                    digits_r.append(rr % d)
                    rr //= d
                digits_r.reverse()
                new_states = sb_in.states[in_idx].copy()
                for m, s in enumerate(sites):
                    new_states[:, s] = digits_r[m]
                out_idx = np.array([sb_out.index_of(row) for row in new_states],
                                   dtype=np.int64)
            rows_all.append(out_idx)
            cols_all.append(in_idx)
            vals_all.append(np.full(len(in_idx), val, dtype=complex))
    if not rows_all:
        return sp.csr_matrix((sb_out.size, sb_in.size), dtype=np.float64)
    mat = sp.coo_matrix((np.concatenate(vals_all),
                         (np.concatenate(rows_all), np.concatenate(cols_all))),
                        shape=(sb_out.size, sb_in.size)).tocsr()
    mat.sum_duplicates()
    if is_real:
        mat = sp.csr_matrix((mat.data.real, mat.indices, mat.indptr), shape=mat.shape)
    return mat


def terms_to_products(terms):
    return [(t.coeff, [(t.start + k, op) for k, op in enumerate(t.ops)])
            for t in terms]


class GenericSpace:
    """Measurement home of a dense sector state (any basis kind)."""

    kind = "generic"

    def __init__(self, basis: SiteBasis, L: int, sector):
        self.basis = basis
        self.L = L
        self.sb = SectorBasis(basis, L, sector)
        self.sector = self.sb.sector
        self.dim = self.sb.size
        self._op_cache = {}

    def _cached_matrix(self, ops):
        key = tuple((s, m.tobytes()) for s, m in sorted(ops, key=lambda x: x[0]))
        if key not in self._op_cache:
            self._op_cache[key] = product_matrix(self.sb, self.sb, [(1.0, ops)])
        return self._op_cache[key]

    def expectation(self, vec, products) -> complex:
        """<psi| sum_k coeff_k prod_m op |psi>, dropping sector-changing products."""
        total = 0.0 + 0.0j
        for coeff, ops in products:
            if product_charge(self.basis, ops) != (0, 0):
                continue
            total += coeff * np.vdot(vec, self._cached_matrix(ops).dot(vec))
        return complex(total)

    def _diag_site_values(self, name):
        dvals = np.real(np.diag(local_operator(self.basis, name)))
        return dvals[self.sb.states]

    def profile(self, vec, name):
        w = np.abs(vec) ** 2
        return w @ self._diag_site_values(name)

    def pair_diag(self, vec, name, pairs):
        vals = self._diag_site_values(name)
        w = np.abs(vec) ** 2
        return np.array([np.dot(w, vals[:, i] * vals[:, j]) for i, j in pairs])

    def pair_zz(self, vec, pairs):
        return self.pair_diag(vec, "S^z", pairs)

    def pair_xx(self, vec, pairs):
        sp_ = local_operator(self.basis, "S^+")
        sm_ = local_operator(self.basis, "S^-")
        out = []
        for i, j in pairs:
            prods = [(0.25, [(i, sp_), (j, sm_)]), (0.25, [(i, sm_), (j, sp_)])]
            out.append(np.real(self.expectation(vec, prods)))
        return np.array(out)

    def apply_product(self, vec, ops, target_space: "GenericSpace"):
        mat = product_matrix(target_space.sb, self.sb, [(1.0, ops)])
        return mat.dot(vec)

    def full_vector(self, vec, max_dim=2_000_000):
        if self.sb.keys is None or self.basis.dim ** self.L > max_dim:
            raise ParameterError("full-space expansion too large for this lattice")
        full = np.zeros(self.basis.dim ** self.L, dtype=complex)
        full[self.sb.keys] = vec
        return full

    def schmidt_values(self, vec, bond):
        """Exact Schmidt spectrum across bond (between sites bond and bond+1)."""
        full = self.full_vector(vec)
        mat = full.reshape(self.basis.dim ** (bond + 1), -1)
        s = np.linalg.svd(mat, compute_uv=False)
        return s[s > 1e-14]


def _species_site_basis(n_max):
    return SiteBasis("boson1", n_max + 1,
                     tuple(str(n) for n in range(n_max + 1)),
                     tuple((n, 0) for n in range(n_max + 1)), n_max)


class ProductSpace:
    """Two-species boson sector as (up configurations) x (down configurations)."""

    kind = "product"

    def __init__(self, basis: SiteBasis, L: int, sector):
        if basis.kind != BOSON2:
            raise ParameterError("ProductSpace requires the two-species boson basis")
        if not isinstance(sector, SymmetrySector):
            sector = SymmetrySector(*sector)
        sector.validate(basis, L)
        self.basis = basis
        self.L = L
        self.sector = sector
        self.species_basis = _species_site_basis(basis.n_max)
        self.sb_up = SectorBasis(self.species_basis, L, (sector.n_up, 0))
        self.sb_dn = SectorBasis(self.species_basis, L, (sector.n_down, 0))
        self.dim = self.sb_up.size * self.sb_dn.size
        self._b1 = _boson_ladder(basis.n_max)
        self._pair_cache = {}

    @property
    def shape2(self):
        return (self.sb_up.size, self.sb_dn.size)

    def basis_vector(self, config):
        """Product state from a joint configuration (pairs of (n_up, n_down))."""
        config = np.asarray(config)
        iu = self.sb_up.index_of(config[:, 0].astype(np.int8))
        idn = self.sb_dn.index_of(config[:, 1].astype(np.int8))
        vec = np.zeros(self.dim, dtype=complex)
        vec[iu * self.sb_dn.size + idn] = 1.0
        return vec

    def _marginals(self, vec):
        W = np.abs(vec.reshape(self.shape2)) ** 2
        return W, W.sum(axis=1), W.sum(axis=0)

    def profile(self, vec, name):
        W, wu, wd = self._marginals(vec)
        up = wu @ self.sb_up.occ_up.astype(np.float64)
        dn = wd @ self.sb_dn.occ_up.astype(np.float64)
        if name == "n_up":
            return up
        if name == "n_down":
            return dn
        if name == "n_tot":
            return up + dn
        if name == "S^z":
            return (up - dn) / 2.0
        raise UnsupportedBasisError(f"profile {name!r} not available on product space")

    def _pair_occ(self, vec, sign):
        W, wu, wd = self._marginals(vec)
        ou = self.sb_up.occ_up.astype(np.float64)
        od = self.sb_dn.occ_up.astype(np.float64)
        return W, wu, wd, ou, od

    def pair_zz(self, vec, pairs):
        W, wu, wd, ou, od = self._pair_occ(vec, -1)
        out = []
        for i, j in pairs:
            uu = np.dot(wu, ou[:, i] * ou[:, j])
            dd = np.dot(wd, od[:, i] * od[:, j])
            ud = ou[:, i] @ (W @ od[:, j])
            du = ou[:, j] @ (W @ od[:, i])
            out.append(0.25 * (uu + dd - ud - du))
        return np.array(out)

    def pair_diag(self, vec, name, pairs):
        if name == "S^z":
            return self.pair_zz(vec, pairs)
        if name != "n_tot":
            raise UnsupportedBasisError(name)
        W, wu, wd, ou, od = self._pair_occ(vec, +1)
        out = []
        for i, j in pairs:
            uu = np.dot(wu, ou[:, i] * ou[:, j])
            dd = np.dot(wd, od[:, i] * od[:, j])
            ud = ou[:, i] @ (W @ od[:, j])
            du = ou[:, j] @ (W @ od[:, i])
            out.append(uu + dd + ud + du)
        return np.array(out)

    def pair_xx(self, vec, pairs):
        """<S^x_i S^x_j> = (1/2) Re <S+_i S-_j> in a fixed sector."""
        P = vec.reshape(self.shape2)
        b = self._b1
        out = []
        for i, j in pairs:
            key = (int(i), int(j))
            if key not in self._pair_cache:
                up_ij = product_matrix(self.sb_up, self.sb_up,
                                       [(1.0, [(i, b.conj().T), (j, b)])])
                dn_ij = product_matrix(self.sb_dn, self.sb_dn,
                                       [(1.0, [(i, b), (j, b.conj().T)])])
                self._pair_cache[key] = (up_ij, dn_ij)
            up_ij, dn_ij = self._pair_cache[key]
            # S+_i S-_j = (bdag_u,i b_u,j) x (b_d,i bdag_d,j); S-_i S+_j is its h.c.
            t1 = np.vdot(P, up_ij.dot(dn_ij.dot(P.T).T))
            out.append(0.5 * np.real(t1))
        return np.array(out)

    def annihilate(self, vec, species, site):
        """Apply b_{species,site}; returns (unnormalized vec, target space)."""
        if species == "up":
            tgt = ProductSpace(self.basis, self.L,
                               (self.sector.n_up - 1, self.sector.n_down))
            op = product_matrix(tgt.sb_up, self.sb_up, [(1.0, [(site, self._b1)])])
            out = op.dot(vec.reshape(self.shape2))
        else:
            tgt = ProductSpace(self.basis, self.L,
                               (self.sector.n_up, self.sector.n_down - 1))
            op = product_matrix(tgt.sb_dn, self.sb_dn, [(1.0, [(site, self._b1)])])
            out = op.dot(vec.reshape(self.shape2).T).T
        return out.reshape(-1), tgt

    def create(self, vec, species, site):
        if species == "up":
            tgt = ProductSpace(self.basis, self.L,
                               (self.sector.n_up + 1, self.sector.n_down))
            op = product_matrix(tgt.sb_up, self.sb_up,
                                [(1.0, [(site, self._b1.conj().T)])])
            out = op.dot(vec.reshape(self.shape2))
        else:
            tgt = ProductSpace(self.basis, self.L,
                               (self.sector.n_up, self.sector.n_down + 1))
            op = product_matrix(tgt.sb_dn, self.sb_dn,
                                [(1.0, [(site, self._b1.conj().T)])])
            out = op.dot(vec.reshape(self.shape2).T).T
        return out.reshape(-1), tgt


def space_for(basis: SiteBasis, L, sector):
    if basis.kind == BOSON2:
        return ProductSpace(basis, L, sector)
    return GenericSpace(basis, L, sector)


class GenericOperator:
    """Sparse sector Hamiltonian assembled from the term list."""

    def __init__(self, H: HamiltonianRep, space: GenericSpace):
        if not isinstance(space, GenericSpace):
            raise ParameterError("GenericOperator needs a GenericSpace")
        if H.basis.kind != space.basis.kind or H.L != space.L:
            raise ShapeError("Hamiltonian/space geometry mismatch")
        self.H = H
        self.space = space
        self.dim = space.dim
        self.mat = product_matrix(space.sb, space.sb, terms_to_products(H.terms))
        if self.mat.dtype != complex:
            self.mat = self.mat.astype(complex)

    def matvec(self, vec):
        return self.mat.dot(vec)

    def energy(self, vec):
        return float(np.real(np.vdot(vec, self.matvec(vec))))


class FactorizedBhOperator:
    """H = H_up (x) 1 + 1 (x) H_down + V sum_j n_up,j n_down,j on a ProductSpace."""

    def __init__(self, H: HamiltonianRep, space: ProductSpace):
        if H.basis.kind != BOSON2 or H.model != "bh":
            raise ParameterError("FactorizedBhOperator requires a BH Hamiltonian")
        if H.L != space.L:
            raise ShapeError("Hamiltonian/space geometry mismatch")
        self.H = H
        self.space = space
        self.dim = space.dim
        c = H.couplings
        b = space._b1
        self.A_up = self._species_matrix(space.sb_up, space.L, c.t_up, c.U_up,
                                         H.prep, "up", b)
        self.A_dn = self._species_matrix(space.sb_dn, space.L, c.t_down, c.U_down,
                                         H.prep, "down", b)
        occ_u = space.sb_up.occ_up.astype(np.float64)
        occ_d = space.sb_dn.occ_up.astype(np.float64)
        self.V_mat = c.V * (occ_u @ occ_d.T)
        # both species blocks are real symmetric; matvec relies on that
        if abs(self.A_up - self.A_up.T).max() > 1e-12 or \
                abs(self.A_dn - self.A_dn.T).max() > 1e-12:
            raise ParameterError("species blocks are not symmetric")
        self._A_up_c = self.A_up.astype(complex)
        self._A_dn_c = self.A_dn.astype(complex)

    @staticmethod
    def _species_matrix(sb, L, t, U, prep, species, b):
        n_op = (b.conj().T @ b).real
        products = []
        for j in range(L - 1):
            products.append((-t, [(j, b.conj().T), (j + 1, b)]))
            products.append((-t, [(j, b), (j + 1, b.conj().T)]))
        for j in range(L):
            diag = (U / 2.0) * (n_op @ n_op - n_op)
            if prep is not None:
                if (j < L // 2 and prep.left_species == species) or \
                        (j >= L // 2 and prep.right_species == species):
                    diag = diag - prep.mu * n_op
            products.append((1.0, [(j, diag)]))
        return product_matrix(sb, sb, products)

    def matvec(self, vec):
        P = vec.reshape(self.space.shape2)
        out = self._A_up_c.dot(P)
        out += self._A_dn_c.dot(P.T).T    # P @ A_dn (A_dn symmetric)
        out += self.V_mat * P
        return out.reshape(-1)

    def energy(self, vec):
        return float(np.real(np.vdot(vec, self.matvec(vec))))


def dense_operator(H: HamiltonianRep, space):
    if isinstance(space, ProductSpace):
        return FactorizedBhOperator(H, space)
    return GenericOperator(H, space)
