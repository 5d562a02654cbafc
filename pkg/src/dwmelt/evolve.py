"""Krylov time evolution with a certified per-step fidelity threshold.

Both representations share the same Lanczos-in-subspace step.  The per-step
acceptance test is the normalized distance

    r^2 = ||U_dt psi - psi'||^2 / ||U_dt psi + psi'||^2 < epsilon,

certified from (a) a conservative Lanczos residual bound times a safety
factor and (b) the accumulated truncation weights of all MPS compressions in
the step.  The exact tail behavior behind (a) is not observable, so the
bound (beta_next * dt * max_s |[exp(-i s T)]_{m-1,0}|, scanned on a small s
grid) is deliberately pessimistic and the safety factor configurable.

The generator is shifted by the (conserved) initial energy before stepping;
that keeps Krylov-vector norms O(spectral width) instead of O(|E_0|), which
both tightens the residual bound and conditions the MPS compressions.  The
phase e^{-i E_0 dt} is restored after each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import tensornet as tn
from .dense import dense_operator
from .errors import AccuracyError, ParameterError
from .models import HamiltonianRep, LocalTerm
from .states import DenseState, MpsState

_BREAKDOWN = 1e-13


@dataclass(frozen=True)
class KrylovConfig:
    """Step size, fidelity threshold, and Krylov/compression controls."""

    dt: float
    epsilon: float = 1e-6
    max_krylov: int = 25
    per_vector_budget: float | None = None    # None: epsilon**2 / 1000
    safety: float = 10.0
    resid_floor: float = 1e-9                 # MPS Lanczos bound target cap
    dense_target: float = 1e-12               # dense path is a quasi-exact oracle
    max_bond: int | None = None
    reorth_tol: float = 1e-8

    def __post_init__(self):
        if self.dt <= 0:
            raise ParameterError("dt must be positive")
        if not 0 < self.epsilon < 1:
            raise ParameterError("epsilon must lie in (0, 1)")
        if self.max_krylov < 2:
            raise ParameterError("max_krylov must be >= 2")

    @property
    def budget(self):
        if self.per_vector_budget is not None:
            return self.per_vector_budget
        return self.epsilon**2 / 1000.0


@dataclass
class StepDiagnostics:
    krylov_dim: int = 0
    resid_bound: float = 0.0
    trunc_weight: float = 0.0
    trunc_dist: float = 0.0
    r2_bound: float = 0.0
    max_bond: int = 1


def _expm_e1(T, dt):
    """Coefficients of exp(-i dt T) e_1 for a small Hermitian matrix."""
    evals, evecs = np.linalg.eigh(T)
    return evecs @ (np.exp(-1j * dt * evals) * evecs[0, :].conj())


def _residual_bound(T, beta_next, dt):
    """Conservative a-posteriori Lanczos expm residual estimate."""
    m = T.shape[0]
    mx = 0.0
    for frac in (0.25, 0.5, 0.75, 1.0):
        u = _expm_e1(T, dt * frac)
        mx = max(mx, abs(u[m - 1]))
    return float(beta_next * dt * mx)


def krylov_step_dense(vec, matvec, cfg: KrylovConfig, phase=1.0):
    """One step exp(-i dt H)|psi> in the full sector, Lanczos with full reorth."""
    target = min(2.0 * np.sqrt(cfg.epsilon), cfg.dense_target)
    v = vec / np.linalg.norm(vec)
    V = [v]
    w = matvec(v)
    scale = max(float(np.linalg.norm(w)), 1.0)
    alphas = [float(np.real(np.vdot(v, w)))]
    w = w - alphas[0] * v
    betas = []
    bound = np.inf
    while True:
        m = len(V)
        beta = float(np.linalg.norm(w))
        T = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
        bound = cfg.safety * _residual_bound(T, beta, cfg.dt)
        if beta < _BREAKDOWN * scale or bound < target or m >= cfg.max_krylov:
            break
        V.append(w / beta)
        betas.append(beta)
        w = matvec(V[m]) - beta * V[m - 1]
        a = float(np.real(np.vdot(V[m], w)))
        alphas.append(a)
        w = w - a * V[m]
        for u in V[:-1]:
            w = w - np.vdot(u, w) * u
    if bound >= 2.0 * np.sqrt(cfg.epsilon):
        raise AccuracyError(
            f"Krylov residual bound {bound:.2e} exceeds threshold at "
            f"max_krylov={cfg.max_krylov}", residual=bound)
    T = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
    u = _expm_e1(T, cfg.dt)
    out = np.zeros_like(vec)
    for c, basis_vec in zip(u, V):
        out += c * basis_vec
    out *= phase / np.linalg.norm(out)
    diag = StepDiagnostics(krylov_dim=len(V), resid_bound=bound,
                           r2_bound=(bound / 2.0) ** 2)
    return out, diag


def krylov_step_mps(mps, mpo, cfg: KrylovConfig, phase=1.0):
    """One certified step on an MPS; returns (mps, CompressionReport, diagnostics)."""
    budget = cfg.budget
    target = cfg.safety * min(np.sqrt(cfg.epsilon), cfg.resid_floor)
    V = [mps.normalized()]
    Tcols = []                 # measured <v_j | H v_k>
    trunc_dist = 0.0
    trunc_weight = 0.0
    max_bond = V[0].max_bond()
    betas = []
    bound = np.inf
    scale = None
    while True:
        k = len(V) - 1
        w_unit, w_norm, rep = tn.zipup_apply(mpo, V[k], budget, cfg.max_bond)
        scale = w_norm if scale is None else max(scale, w_norm)
        max_bond = max(max_bond, rep.max_bond)
        col = np.array([w_norm * tn.overlap(V[j], w_unit) for j in range(k + 1)])
        Tcols.append(col)
        m = k + 1
        T = np.zeros((m, m), dtype=complex)
        for kk, c in enumerate(Tcols):
            T[:kk + 1, kk] = c[:kk + 1]
        T = (T + T.conj().T) / 2.0
        for kk in range(m - 1):
            T[kk + 1, kk] = T[kk, kk + 1] = betas[kk]
        # orthogonalize w against the last two vectors (Lanczos three-term)
        parts = [(w_norm, w_unit)]
        for j in (k, k - 1):
            if j >= 0:
                parts.append((-col[j], V[j]))
        w_orth, beta, rep2 = tn.linear_combination(parts, budget,
                                                   max_bond=cfg.max_bond)
        trunc_weight += rep.discarded_weight + rep2.discarded_weight
        # truncations of H|v_k| (norm w_norm) enter v_{k+1} amplified by 1/beta
        amp = max(w_norm / max(beta, 1e-300), 1.0) if beta > _BREAKDOWN * scale else 1.0
        trunc_dist += (np.sqrt(2.0 * rep.discarded_weight)
                       + np.sqrt(2.0 * rep2.discarded_weight)) * amp
        max_bond = max(max_bond, rep2.max_bond)
        bound = cfg.safety * _residual_bound(T, beta, cfg.dt)
        if beta < _BREAKDOWN * scale or bound < target or m >= cfg.max_krylov:
            break
        # selective reorthogonalization against older vectors
        resid = [(j, tn.overlap(V[j], w_orth)) for j in range(m - 2)]
        bad = [(j, ov) for j, ov in resid if abs(ov) > cfg.reorth_tol]
        if bad:
            parts = [(beta, w_orth)] + [(-beta * ov, V[j]) for j, ov in bad]
            w_orth, beta2, rep3 = tn.linear_combination(parts, budget,
                                                        max_bond=cfg.max_bond)
            trunc_weight += rep3.discarded_weight
            trunc_dist += np.sqrt(2.0 * rep3.discarded_weight)
            beta = beta2
        V.append(w_orth)
        betas.append(beta)
    u = _expm_e1(T, cfg.dt)
    psi, psi_norm, rep4 = tn.linear_combination(
        [(u[j], V[j]) for j in range(len(V))], budget, max_bond=cfg.max_bond)
    trunc_weight += rep4.discarded_weight
    trunc_dist += np.sqrt(2.0 * rep4.discarded_weight)
    max_bond = max(max_bond, rep4.max_bond)
    dist_bound = bound + trunc_dist
    r2 = (dist_bound / 2.0) ** 2
    if r2 >= cfg.epsilon:
        raise AccuracyError(
            f"step not certified: r2 bound {r2:.2e} >= epsilon {cfg.epsilon:.2e} "
            f"(krylov m={len(V)}, resid {bound:.2e}, trunc {trunc_dist:.2e})",
            residual=r2)
    psi = psi.scale(phase)
    report = tn.CompressionReport(trunc_weight, max_bond)
    diag = StepDiagnostics(krylov_dim=len(V), resid_bound=bound,
                           trunc_weight=trunc_weight, trunc_dist=trunc_dist,
                           r2_bound=r2, max_bond=max_bond)
    return psi, report, diag


class EvolutionAbort(AccuracyError):
    """A trajectory died mid-flight; carries the partial record."""

    def __init__(self, msg, partial_record, residual=None):
        super().__init__(msg, residual=residual)
        self.partial_record = partial_record


def _shifted_terms(H: HamiltonianRep, e0):
    eye = np.eye(H.basis.dim, dtype=complex)
    return list(H.terms) + [LocalTerm(0, (eye,), -e0, "energy_shift")]


def evolve_trajectory(state, H: HamiltonianRep, cfg: KrylovConfig, horizon,
                      observer, checkpoint_cb=None):
    """Evolve ``state`` under ``H`` to time ``horizon``, sampling observables.

    ``observer`` is an observables.Observer; samples land in a
    TrajectoryRecord.  Accuracy failures abort with EvolutionAbort carrying
    the partial record flagged incomplete.
    """
    from .observables import TrajectoryRecord

    n_steps = int(round(horizon / cfg.dt))
    if abs(n_steps * cfg.dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ParameterError("horizon must be an integer multiple of dt")
    record = TrajectoryRecord(meta={
        "model": H.model, "L": H.L, "rep": state.rep,
        "dt": cfg.dt, "epsilon": cfg.epsilon, "horizon": horizon,
    })
    if state.rep == "dense":
        op = dense_operator(H, state.space)
        e0 = op.energy(state.vec)
        shifted = lambda v: op.matvec(v) - e0 * v
        phase = np.exp(-1j * cfg.dt * e0)
        vec = state.vec.copy()
        cur = state
        record.add_sample(0.0, observer.measure(cur, op=op))
        for step in range(1, n_steps + 1):
            try:
                vec, diag = krylov_step_dense(vec, shifted, cfg, phase)
            except AccuracyError as exc:
                record.meta["incomplete"] = True
                raise EvolutionAbort(str(exc), record, residual=exc.residual) from exc
            record.add_step_diagnostics(step, diag)
            cur = DenseState(state.space, vec, normalize=False)
            if observer.due(step, n_steps):
                record.add_sample(step * cfg.dt, observer.measure(cur, op=op))
            if checkpoint_cb is not None:
                checkpoint_cb(step, step * cfg.dt, cur, record)
        return record, cur
    # MPS path
    mpo_plain = H.mpo
    e0 = float(np.real(tn.expectation_mpo(state.mps, mpo_plain)))
    mpo = tn.mpo_from_terms(H.L, H.basis.dim, _shifted_terms(H, e0))
    phase = np.exp(-1j * cfg.dt * e0)
    cur = state
    record.add_sample(0.0, observer.measure(cur))
    mps = state.mps
    for step in range(1, n_steps + 1):
        try:
            mps, _rep, diag = krylov_step_mps(mps, mpo, cfg, phase)
        except AccuracyError as exc:
            record.meta["incomplete"] = True
            raise EvolutionAbort(str(exc), record, residual=exc.residual) from exc
        record.add_step_diagnostics(step, diag)
        cur = MpsState(state.basis, mps, state.sector, normalize=False)
        if observer.due(step, n_steps):
            record.add_sample(step * cfg.dt, observer.measure(cur))
        if checkpoint_cb is not None:
            checkpoint_cb(step, step * cfg.dt, cur, record)
    return record, cur
