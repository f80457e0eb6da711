"""Time integrators for the nodally constrained harmonic map heat flow / LLG system.

Unknowns are stored component-major when flattened: ``[u^1; u^2; (u^3)]``.

Both schemes solve saddle systems whose constraint acts vertex by vertex.
The multiplier enters the momentum equation through ``(q, i(d . v))``,
which equals ``sum_a (M q)_a d_a . v_a``; the linear solves therefore carry
the multiplier moment ``sigma`` (one value per vertex) and both the coupling
and the constraint block are the nodal direction matrix D.  The system is
symmetric whenever the A block is.

The moment is turned into a P1 multiplier in one of two ways:

* ``"lumped"`` (default): ``q_a = sigma_a / (c mu_a)``, i.e. the coupling
  term evaluated with the lumped product ``(q, i(d . v))_h``;
* ``"consistent"``: ``q = M^{-1} sigma / c``, the exact L2 coupling.

Here ``c`` is the coupling coefficient of the scheme (gamma for Euler,
gamma k / 2 for Crank--Nicolson).  The velocity field does not depend on
the choice.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .assembly import (NORM_EPS, Operators, dirichlet_energy, inner_h, nodal_interpolate,
                       normalize_nodal, norm_h)
from .linsolve import SaddleSystem, SolverError, SPDFactor, solve_saddle

log = logging.getLogger(__name__)

CSV_COLUMNS = ["step", "time", "energy", "dissipation", "energy_residual",
               "min_norm", "max_norm", "fp_iters", "q_negnorm"]


@dataclass(frozen=True)
class ModelParams:
    gamma: float
    alpha: float = 0.0
    k: float = 1e-3
    T: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.k > 0:
            raise ValueError(f"time step k must be > 0, got {self.k}")
        if self.T < 0:
            raise ValueError(f"final time must be >= 0, got {self.T}")
        n = self.T / self.k
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"T = {self.T} is not an integer multiple of k = {self.k}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.k))

    def check_dimension(self, dim: int):
        if dim == 2 and self.alpha != 0:
            raise ValueError("alpha must be 0 for two-component fields")


@dataclass
class StepReport:
    step: int
    time: float
    energy: float
    dissipation: float = 0.0
    energy_residual: float = 0.0
    min_norm: float = 1.0
    max_norm: float = 1.0
    fp_iters: int = 0
    q_negnorm: float = 0.0

    def row(self):
        return [self.step] + [_fmt(getattr(self, c)) for c in CSV_COLUMNS[1:]]


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class StepState:
    u: np.ndarray
    q: np.ndarray
    time: float
    step: int = 0
    report: StepReport | None = None


class SchemeOperators:
    """Operators plus cached factorisations for one mesh and parameter set."""

    def __init__(self, ops: Operators):
        self.ops = ops
        self._a_cache = {}

    @property
    def mesh(self):
        return self.ops.mesh

    @cached_property
    def mass_factor(self):
        return SPDFactor(self.ops.M)

    @cached_property
    def h1_factor(self):
        return SPDFactor(self.ops.K + self.ops.M)

    def scalar_block(self, lumped_coef: float, stiff_coef: float):
        """diag(lumped_coef * mu) + stiff_coef * K and its (lazy) factor, cached by coefficients."""
        key = (lumped_coef, stiff_coef)
        if key not in self._a_cache:
            L = sp.csr_matrix(sp.diags(lumped_coef * self.ops.mu) + stiff_coef * self.ops.K)
            self._a_cache[key] = (L, _LazyFactor(L))
        return self._a_cache[key]

    def multiplier(self, sigma, coef: float, kind: str = "lumped"):
        if kind == "lumped":
            return sigma / (coef * self.ops.mu)
        if kind == "consistent":
            return self.mass_factor.solve(sigma) / coef
        raise ValueError(f"unknown multiplier representation {kind!r}")

    def multiplier_dual_norm(self, q) -> float:
        """Dual H1 norm of q over the P1 space: sup (q, f_h) / ||f_h||_{H1}."""
        b = self.ops.M @ q
        r = self.h1_factor.solve(b)
        return float(math.sqrt(max(b @ r, 0.0)))


class _LazyFactor:
    """SPD factorisation computed on the first solve (the null-space solver never needs it)."""

    def __init__(self, A):
        self.A = A
        self._f = None

    def solve(self, b):
        if self._f is None:
            self._f = SPDFactor(self.A)
        return self._f.solve(b)


def _as_ops(operators) -> SchemeOperators:
    if isinstance(operators, SchemeOperators):
        return operators
    return SchemeOperators(operators)


def _flat(u):
    return np.asarray(u, float).T.ravel()


def _unflat(x, n):
    return x.reshape(-1, n).T.copy()


def direction_matrix(d) -> sp.csr_matrix:
    """Nodal constraint rows: row a holds d_a in the component-major layout."""
    n, m = d.shape
    rows = np.tile(np.arange(n), m)
    cols = np.arange(n * m)
    return sp.csr_matrix((d.T.ravel(), (rows, cols)), shape=(n, n * m))


def _block_apply(factor, n, m):
    def solve(x):
        return np.concatenate([factor.solve(x[c * n:(c + 1) * n]) for c in range(m)])
    return solve


def _cross_blocks(u, mu, coef):
    """Sparse matrix of v -> coef * mu_a * (u_a x v_a), component-major."""
    n = u.shape[0]
    w = coef * mu
    # (u x v)_i = sum_j U_ij v_j with U = [[0,-u3,u2],[u3,0,-u1],[-u2,u1,0]]
    entries = {(0, 1): -u[:, 2], (0, 2): u[:, 1], (1, 0): u[:, 2],
               (1, 2): -u[:, 0], (2, 0): -u[:, 1], (2, 1): u[:, 0]}
    rows, cols, vals = [], [], []
    idx = np.arange(n)
    for (i, j), val in entries.items():
        rows.append(i * n + idx)
        cols.append(j * n + idx)
        vals.append(w * val)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(3 * n, 3 * n))


def euler_system(u_n, operators, params: ModelParams, form: str = "nodal") -> SaddleSystem:
    """Linear saddle system of one linearly implicit Euler step.

    ``form="nodal"`` gives the symmetric system in the multiplier moment
    ``sigma = gamma M q`` with constraint d_a . u_a = |u^n_a|.  ``form="mass"``
    gives the literal variational form: unknown q, coupling rows
    ``gamma d_a (M row a)`` and mass-weighted constraint rows
    ``sum_b M_ab u^n_b . u_b = sum_b M_ab |u^n_b|^2``.
    """
    so = _as_ops(operators)
    ops = so.ops
    u_n = np.asarray(u_n, float)
    n, m = u_n.shape
    k, g, a = params.k, params.gamma, params.alpha
    nrm = np.linalg.norm(u_n, axis=1)
    if np.any(nrm < NORM_EPS):
        raise SolverError(f"nodal norm below guard at vertex {int(np.argmin(nrm))}")
    d = u_n / nrm[:, None]

    L, Lf = so.scalar_block(1.0 / k, g)
    A = sp.block_diag([L] * m, format="csr")
    a_solve = None
    if a != 0:
        A = A + _cross_blocks(u_n, ops.mu, a / k)
    else:
        a_solve = _block_apply(Lf, n, m)
    rhs_u = _flat((ops.mu / k)[:, None] * u_n)
    D = direction_matrix(d)
    if form == "nodal":
        return SaddleSystem(A, D, rhs_u, nrm.copy(), a_solve=a_solve, symmetric=(a == 0),
                            schur_diag=1.0 / L.diagonal(), directions=d)
    if form == "mass":
        Bm = g * (ops.M @ D)
        Cm = ops.M @ direction_matrix(u_n)
        return SaddleSystem(A, sp.csr_matrix(Bm), rhs_u, ops.M @ (nrm ** 2), C=sp.csr_matrix(Cm),
                            a_solve=a_solve)
    raise ValueError(f"unknown form {form!r}")


def _diagnostics(so, u_old, u_new, q, params, step, time, extra_dissipation=0.0, fp_iters=0,
                 e_old=None):
    ops = so.ops
    k, g = params.k, params.gamma
    du = (u_new - u_old) / k
    e_new = dirichlet_energy(u_new, ops.K)
    if e_old is None:
        e_old = dirichlet_energy(u_old, ops.K)
    diss = k * inner_h(du, du, ops.mu) + extra_dissipation
    nrm = np.linalg.norm(u_new, axis=1)
    return StepReport(step=step, time=time, energy=e_new, dissipation=diss,
                      energy_residual=abs(diss + 0.5 * g * e_new - 0.5 * g * e_old),
                      min_norm=float(nrm.min()), max_norm=float(nrm.max()), fp_iters=fp_iters,
                      q_negnorm=so.multiplier_dual_norm(q))


def euler_step(state: StepState, params: ModelParams, operators, solver: str = "nullspace",
               tol: float = 1e-12, multiplier: str = "lumped") -> StepState:
    """One step of the linearly implicit Euler scheme."""
    so = _as_ops(operators)
    u_n = state.u
    params.check_dimension(u_n.shape[1])
    nrm = np.linalg.norm(u_n, axis=1)
    if nrm.min() < 1 - 1e-10:
        raise SolverError(f"nodal norm {nrm.min():.3e} below 1 at vertex {int(nrm.argmin())}")
    sysm = euler_system(u_n, so, params)
    x, sigma = solve_saddle(sysm, tol=tol, method=solver)
    n = u_n.shape[0]
    u_new = _unflat(x, n)
    q = so.multiplier(sigma, params.gamma, multiplier)
    k, g = params.k, params.gamma
    du = (u_new - u_n) / k
    extra = k * (g * k / 2) * dirichlet_energy(du, so.ops.K)
    rep = _diagnostics(so, u_n, u_new, q, params, state.step + 1, state.time + k, extra)
    return StepState(u_new, q, state.time + k, state.step + 1, rep)


class FixedPointError(SolverError):
    def __init__(self, msg, increment):
        super().__init__(msg)
        self.increment = increment


def cn_step(state: StepState, params: ModelParams, operators, fp_tol: float = 1e-13,
            fp_maxiter: int = 100, renormalize: bool = False, solver: str = "nullspace",
            tol: float = 1e-13, multiplier: str = "lumped") -> StepState:
    """One Crank--Nicolson step solved by fixed-point iteration on the half-step value.

    Each iteration is a linear saddle solve for (w, sigma):

        (w, v)_h + (gk/2)(grad w, grad v) + sum_a sigma_a d_a . v_a = (u^n, v)_h
        d_a . w_a = d_a . u^n_a + (1 - |u^n_a|^2) / (4 |w_a^(i)|)

    with d = w^(i)/|w^(i)| and sigma = (gk/2) M s, which is the fixed-point
    system written with the nodal directions.  The multiplier returned is
    the half-step value s, attached to t_n + k/2.
    """
    if params.alpha != 0:
        raise ValueError("the Crank--Nicolson solver supports alpha = 0 only")
    so = _as_ops(operators)
    ops = so.ops
    u_n = np.asarray(state.u, float)
    if renormalize:
        u_n = normalize_nodal(u_n)
    n, m = u_n.shape
    k, g = params.k, params.gamma
    c = g * k / 2
    L, Lf = so.scalar_block(1.0, c)
    A = sp.block_diag([L] * m, format="csr")
    a_solve = _block_apply(Lf, n, m)
    rhs_u = _flat(ops.mu[:, None] * u_n)
    defect = 1.0 - np.einsum("ai,ai->a", u_n, u_n)
    schur_diag = 1.0 / L.diagonal()  # unit directions: diag(D A^-1 D^T) ~ 1 / L_aa

    w = u_n.copy()
    sigma = None
    for it in range(1, fp_maxiter + 1):
        wn = np.linalg.norm(w, axis=1)
        if wn.min() < NORM_EPS:
            raise SolverError(f"|w| below guard at vertex {int(wn.argmin())}")
        d = w / wn[:, None]
        rhs_q = np.einsum("ai,ai->a", d, u_n) + defect / (4 * wn)
        sysm = SaddleSystem(A, direction_matrix(d), rhs_u, rhs_q, a_solve=a_solve, symmetric=True,
                            schur_diag=schur_diag, directions=d)
        x, sigma = solve_saddle(sysm, tol=tol, method=solver, q0=sigma, u0=_flat(w))
        w_new = _unflat(x, n)
        inc = norm_h(w_new - w, ops.mu)
        ref = norm_h(w, ops.mu)
        w = w_new
        if inc <= fp_tol * ref:
            break
    else:
        raise FixedPointError(f"fixed point not converged after {fp_maxiter} iterations "
                              f"(last relative increment {inc / ref:.3e})", inc / ref)

    u_new = 2 * w - u_n
    s = so.multiplier(sigma, c, multiplier)
    rep = _diagnostics(so, u_n, u_new, s, params, state.step + 1, state.time + k, fp_iters=it)
    return StepState(u_new, s, state.time + k, state.step + 1, rep)


def prepare_initial(u0, mesh, components: int | None = None) -> np.ndarray:
    """Nodal interpolation followed by nodal normalisation."""
    vals = nodal_interpolate(u0, mesh, components)
    return normalize_nodal(vals)


def recover_multiplier(u, K, M, tol: float = 1e-8, lumped=None) -> np.ndarray:
    """Multiplier of the semi-discrete problem for a nodally unit field.

    Solves sum_a q_a (phi_a, phi_b) = -sum_a (u_a . u_b)(grad phi_a, grad phi_b).
    Passing the lumped mass as ``lumped`` replaces the mass solve by a
    nodal division.
    """
    from .linsolve import solve_spd

    u = np.asarray(u, float)
    nrm = np.linalg.norm(u, axis=1)
    if np.max(np.abs(nrm - 1)) > tol:
        raise ValueError(f"field is not nodally unit (max deviation {np.max(np.abs(nrm - 1)):.2e})")
    Kc = sp.coo_matrix(K)
    contrib = Kc.data * np.einsum("ai,ai->a", u[Kc.row], u[Kc.col])
    rhs = -np.bincount(Kc.row, weights=contrib, minlength=u.shape[0])
    if lumped is not None:
        return rhs / lumped
    return solve_spd(M, rhs, tol=1e-12)


@dataclass
class Trajectory:
    reports: list
    initial_energy: float
    final: StepState
    global_residual: float
    snapshots: list = field(default_factory=list)

    def write_csv(self, path):
        write_step_csv(path, self.reports)


def write_step_csv(path, reports):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for r in reports:
            wr.writerow(r.row())


def run_simulation(u0h, operators, params: ModelParams, scheme: str = "crank-nicolson",
                   fp_tol: float = 1e-13, fp_maxiter: int = 100, renormalize: bool = False,
                   solver: str = "nullspace", snapshot_every: int = 0, callback=None,
                   n_steps: int | None = None, multiplier: str = "lumped") -> Trajectory:
    """March ``n_steps`` (default ``params.n_steps``) steps from the nodal field ``u0h``."""
    so = _as_ops(operators)
    u0h = np.asarray(u0h, float)
    params.check_dimension(u0h.shape[1])
    nsteps = params.n_steps if n_steps is None else n_steps
    e0 = dirichlet_energy(u0h, so.ops.K)
    state = StepState(u0h.copy(), np.zeros(u0h.shape[0]), 0.0, 0,
                      StepReport(step=0, time=0.0, energy=e0,
                                 min_norm=float(np.linalg.norm(u0h, axis=1).min()),
                                 max_norm=float(np.linalg.norm(u0h, axis=1).max())))
    reports = [state.report]
    snaps = [(0.0, u0h.copy())] if snapshot_every else []
    total_diss = 0.0
    for _ in range(nsteps):
        if scheme == "euler":
            state = euler_step(state, params, so, solver=solver, multiplier=multiplier)
        elif scheme == "crank-nicolson":
            state = cn_step(state, params, so, fp_tol=fp_tol, fp_maxiter=fp_maxiter,
                            renormalize=renormalize, solver=solver, multiplier=multiplier)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        total_diss += state.report.dissipation
        reports.append(state.report)
        if snapshot_every and state.step % snapshot_every == 0:
            snaps.append((state.time, state.u.copy()))
        if callback is not None:
            callback(state)
        log.debug("step %d t=%.6g E=%.12g fp=%d", state.step, state.time,
                  state.report.energy, state.report.fp_iters)
    g = params.gamma
    resid = abs(total_diss + 0.5 * g * state.report.energy - 0.5 * g * e0)
    scale = 0.5 * g * e0
    rel = resid / scale if scale > 0 else resid
    return Trajectory(reports, e0, state, rel, snaps)
