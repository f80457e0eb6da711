"""Exact solutions, error norms, convergence rates and singular-field diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .assembly import (assemble_mass, assemble_stiffness, basis_gradients, cell_energies,
                       dirichlet_energy, load_vector, nodal_interpolate, quadrature_points)
from .linsolve import SPDFactor
from .mesh import Mesh


@dataclass(frozen=True)
class SmoothTestProblem:
    """u = (cos theta, sin theta) with theta a decaying Neumann heat mode.

    theta = Theta exp(-gamma (kx^2 + ky^2) t) cos(kx x) cos(ky y) and the
    multiplier is q = -|grad theta|^2.
    """

    Theta: float = math.pi
    kx: float = math.pi
    ky: float = 2 * math.pi
    gamma: float = 0.01

    def amplitude(self, t):
        return self.Theta * math.exp(-self.gamma * (self.kx ** 2 + self.ky ** 2) * t)

    def _parts(self, x, t):
        x = np.asarray(x, float)
        A = self.amplitude(t)
        cx, sx = np.cos(self.kx * x[..., 0]), np.sin(self.kx * x[..., 0])
        cy, sy = np.cos(self.ky * x[..., 1]), np.sin(self.ky * x[..., 1])
        th = A * cx * cy
        thx = -A * self.kx * sx * cy
        thy = -A * self.ky * cx * sy
        thxx = -self.kx ** 2 * th
        thyy = -self.ky ** 2 * th
        thxy = A * self.kx * self.ky * sx * sy
        return th, thx, thy, thxx, thyy, thxy

    def theta(self, x, t):
        return self._parts(x, t)[0]

    def u(self, x, t):
        th = self.theta(x, t)
        return np.stack([np.cos(th), np.sin(th)], axis=-1)

    def grad_u(self, x, t):
        """Shape (..., 2 components, 2 directions)."""
        th, thx, thy, *_ = self._parts(x, t)
        gth = np.stack([thx, thy], axis=-1)
        return np.stack([-np.sin(th)[..., None] * gth, np.cos(th)[..., None] * gth], axis=-2)

    def q(self, x, t):
        _, thx, thy, *_ = self._parts(x, t)
        return -(thx ** 2 + thy ** 2)

    def grad_q(self, x, t):
        _, thx, thy, thxx, thyy, thxy = self._parts(x, t)
        return np.stack([-2 * (thx * thxx + thy * thxy), -2 * (thx * thxy + thy * thyy)], axis=-1)

    def u0(self, x):
        return self.u(x, 0.0)


@dataclass(frozen=True)
class SingularIC:
    """Two repelling point singularities near x = -delta and x = +delta."""

    delta: float
    dimension: int = 2

    def raw(self, x):
        x = np.asarray(x, float)
        shift = np.zeros(self.dimension)
        shift[0] = self.delta
        w = expit(-5.0 * x[..., 0])[..., None]  # 1 / (1 + exp(5x))
        return w * (x + shift) + (1 - w) * (-(x - shift))

    def __call__(self, x):
        v = self.raw(x)
        n = np.linalg.norm(v, axis=-1)
        if np.any(n == 0):
            raise ValueError("blended field vanishes at an evaluation point")
        return v / n[..., None]


def singular_ic_eval(ic: SingularIC, x):
    return ic(np.atleast_2d(x))[0] if np.ndim(x) == 1 else ic(x)


def hedgehog(x0):
    """The field (x - x0)/|x - x0|; undefined (nan) at x0."""
    x0 = np.asarray(x0, float)

    def f(x):
        v = np.asarray(x, float) - x0
        return v / np.linalg.norm(v, axis=-1)[..., None]
    return f


def _fe_values(mesh, vals, bary):
    V = np.asarray(vals, float)[mesh.cells]
    if V.ndim == 2:
        return np.einsum("qi,ci->cq", bary, V)
    return np.einsum("qi,cik->cqk", bary, V)


def _fe_grads(mesh, vals):
    G, _ = basis_gradients(mesh)
    V = np.asarray(vals, float)[mesh.cells]
    if V.ndim == 2:
        return np.einsum("ci,cid->cd", V, G)
    return np.einsum("cik,cid->ckd", V, G)


def error_norms_u(u_h, problem: SmoothTestProblem, t: float, mesh: Mesh, quad_order: int = 4) -> dict:
    """L1, L2, Linf and full H1 norms of u - u_h.

    L1 sums the component L1 norms; Linf is the largest component error
    over quadrature points and vertices.
    """
    if quad_order < 4:
        raise ValueError("quad_order must be >= 4")
    pts, W, bary = quadrature_points(mesh, quad_order)
    uq = _fe_values(mesh, u_h, bary)
    ue = problem.u(pts, t)
    diff = ue - uq
    e = np.linalg.norm(diff, axis=-1)
    gh = _fe_grads(mesh, u_h)  # (nc, comp, dim)
    ge = problem.grad_u(pts, t)
    eg2 = ((ge - gh[:, None]) ** 2).sum(axis=(-1, -2))
    ev = np.abs(problem.u(mesh.vertices, t) - u_h)
    l2 = float(np.sqrt((W * e ** 2).sum()))
    l1 = float((W[..., None] * np.abs(diff)).sum())
    return {"L1": l1, "L2": l2, "Linf": float(max(np.abs(diff).max(), ev.max())),
            "H1": float(np.sqrt(l2 ** 2 + (W * eg2).sum()))}


def error_norms_q(q_h, problem: SmoothTestProblem, t: float, mesh: Mesh, quad_order: int = 4) -> dict:
    """L1, L2, Linf and full H1 norms of q - q_h."""
    pts, W, bary = quadrature_points(mesh, quad_order)
    e = np.abs(problem.q(pts, t) - _fe_values(mesh, q_h, bary))
    eg = problem.grad_q(pts, t) - _fe_grads(mesh, q_h)[:, None, :]
    ev = np.abs(problem.q(mesh.vertices, t) - q_h)
    l2 = float(np.sqrt((W * e ** 2).sum()))
    return {"L1": float((W * e).sum()), "L2": l2, "Linf": float(max(e.max(), ev.max())),
            "H1": float(np.sqrt(l2 ** 2 + (W * (eg ** 2).sum(-1)).sum()))}


def negnorm_functional(mesh: Mesh, b, space: str = "h1", K=None, M=None) -> float:
    """Norm of the Riesz representative of a functional given on the P1 basis.

    ``b[a]`` is the value of the functional on phi_a.  ``space="h1"``
    represents it in the whole P1 space with the full H1 inner product
    (grad, grad) + (., .); ``space="h10"`` uses the interior-vertex subspace
    with the seminorm (grad, grad).
    """
    K = assemble_stiffness(mesh) if K is None else K
    b = np.asarray(b, float)
    if space == "h1":
        M = assemble_mass(mesh) if M is None else M
        A, bi = K + M, b
    elif space == "h10":
        inner = mesh.interior_vertices
        if inner.size == 0:
            raise ValueError("mesh has no interior vertices")
        A, bi = K[inner][:, inner], b[inner]
    else:
        raise ValueError(f"unknown space {space!r}")
    r = SPDFactor(A).solve(bi)
    return float(math.sqrt(max(bi @ r, 0.0)))


def negnorm_q(q_h, problem, t: float, mesh: Mesh, quad_order: int = 4, space: str = "h1",
              K=None, M=None) -> float:
    """Discrete (H1)' norm of q - q_h: the norm of the projected Riesz representative.

    The functional f_h -> (q - q_h, f_h) is formed with quadrature for the
    exact q and exact P1 integration for q_h.  ``problem`` may be a
    SmoothTestProblem (uses ``problem.q``) or any callable q(x).
    """
    qf = (lambda x: problem.q(x, t)) if hasattr(problem, "q") else problem
    M = assemble_mass(mesh) if M is None else M
    b = load_vector(qf, mesh, quad_order) - M @ np.asarray(q_h, float)
    return negnorm_functional(mesh, b, space=space, K=K, M=M)


def convergence_rates(errors, hs=None):
    """log2(e_{i-1}/e_i) for successive halvings; None where undefined."""
    errors = list(errors)
    if len(errors) < 2:
        raise ValueError("need at least two errors")
    if hs is not None:
        if len(hs) != len(errors):
            raise ValueError("errors and hs differ in length")
    rates = []
    for a, b in zip(errors[:-1], errors[1:]):
        if a <= 0 or b <= 0:
            rates.append(None)
            continue
        if hs is None:
            rates.append(math.log2(a / b))
        else:
            i = len(rates)
            rates.append(math.log(a / b) / math.log(hs[i] / hs[i + 1]))
    return rates


def h1_norm(v, K, M) -> float:
    return math.sqrt(max(dirichlet_energy(v, K) + dirichlet_energy(v, M), 0.0))


def rho_estimator(u_k, u_k2, u_k4, K, M=None):
    """Ratio of successive H1 increments and the implied temporal order.

    Returns ``(rho, rate, overflow)``; ``overflow`` is True when the second
    increment vanishes.
    """
    Mm = M if M is not None else 0 * K

    def nrm(v):
        return h1_norm(v, K, Mm)

    num = nrm(np.asarray(u_k) - u_k2)
    den = nrm(np.asarray(u_k2) - u_k4)
    if den == 0:
        return math.inf, math.inf, True
    rho = num / den
    return rho, (math.log2(rho) if rho > 0 else -math.inf), False


def local_energy(mesh: Mesh, x0, K=None):
    """Energy on the cells containing x0 of the interpolated field (x - x0)/|x - x0|."""
    u = nodal_interpolate(hedgehog(x0), mesh)
    cells = mesh.locate(x0)
    return float(cell_energies(u, mesh)[cells].sum()), cells


def barrier_scan(mesh: Mesh, path, K=None):
    """Total energy ||grad i_h((x - x0)/|x - x0|)||^2 along a path of centres.

    Returns ``(energies, skipped)``; points coinciding with a vertex are
    skipped (energy nan, flag True).
    """
    K = assemble_stiffness(mesh) if K is None else K
    energies, skipped = [], []
    for x0 in np.asarray(path, float):
        try:
            u = nodal_interpolate(hedgehog(x0), mesh)
        except ValueError:
            energies.append(float("nan"))
            skipped.append(True)
            continue
        energies.append(dirichlet_energy(u, K))
        skipped.append(False)
    return np.array(energies), np.array(skipped)


def oscillation_amplitude(xs, energies, period, lo=None, hi=None):
    """Median peak-to-peak variation of a scan over windows one period wide.

    Windows are restricted to ``[lo, hi]`` to keep away from the boundary
    layer where the large-scale trend dominates.
    """
    xs, energies = np.asarray(xs), np.asarray(energies)
    lo = xs.min() if lo is None else lo
    hi = xs.max() if hi is None else hi
    amps = []
    start = lo
    while start + period <= hi + 1e-12:
        sel = (xs >= start) & (xs <= start + period) & np.isfinite(energies)
        if sel.sum() >= 3:
            seg = energies[sel]
            # remove the linear large-scale trend across the window
            p = np.polyfit(xs[sel], seg, 1)
            r = seg - np.polyval(p, xs[sel])
            amps.append(r.max() - r.min())
        start += period
    return float(np.median(amps)) if amps else float("nan")
