"""Sparse SPD and saddle-point solvers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    pass


class SPDFactor:
    """Sparse symmetric factorisation used for repeated solves.

    SuperLU is run in symmetric mode (no row pivoting, symmetric column
    ordering), so the diagonal of U carries the LDL^T pivots; a
    non-positive pivot means the matrix is not positive definite.
    """

    def __init__(self, A):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.shape = A.shape
        self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                             options={"SymmetricMode": True})
        piv = self._lu.U.diagonal()
        if not np.all(piv > 0):
            i = int(np.flatnonzero(~(piv > 0))[0])
            raise SolverError(f"non-positive pivot {piv[i]:.3e} at position {i}: matrix is not SPD")

    def solve(self, b):
        return self._lu.solve(np.asarray(b, float))


def _relres(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def solve_spd(A, b, tol: float = 1e-12, method: str = "direct", maxiter: int | None = None):
    """Solve A x = b for symmetric positive definite A."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, float)
    if method == "direct":
        x = SPDFactor(A).solve(b)
    elif method == "cg":
        x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter or 10 * A.shape[0])
        if info != 0:
            raise SolverError(f"conjugate gradient did not converge (info={info})")
    else:
        raise ValueError(f"unknown method {method!r}")
    res = _relres(A, x, b)
    # cg stops on the preconditioned residual; allow a little slack for round-off
    if not np.isfinite(res) or res > max(tol, 1e-13) * 10:
        raise SolverError(f"relative residual {res:.3e} exceeds tolerance {tol:.1e}")
    return x


@dataclass
class SaddleSystem:
    """Block system [[A, B^T], [C, 0]] [u; q] = [rhs_u; rhs_q].

    ``C`` defaults to ``B`` (symmetric saddle point).  ``a_solve`` is an
    optional callable applying A^{-1}; it lets repeated systems that share
    the A block reuse one factorisation.  ``schur_diag`` optionally
    approximates the diagonal of C A^{-1} B^T and preconditions Uzawa.
    ``directions`` (unit rows, shape (n, m)) marks a nodal constraint
    ``B = C = [diag(d^1) ... diag(d^m)]`` and enables the null-space solver.
    """

    A: sp.spmatrix
    B: sp.spmatrix
    rhs_u: np.ndarray
    rhs_q: np.ndarray
    C: sp.spmatrix | None = None
    a_solve: object = field(default=None, repr=False)
    symmetric: bool = False
    schur_diag: np.ndarray | None = field(default=None, repr=False)
    directions: np.ndarray | None = field(default=None, repr=False)

    @property
    def constraint(self):
        return self.B if self.C is None else self.C

    def residuals(self, u, q):
        ru = self.A @ u + self.B.T @ q - self.rhs_u
        rq = self.constraint @ u - self.rhs_q
        return ru, rq


def _check_rank(sysm):
    # a constraint row with no entries cannot be satisfied / determines no multiplier
    for name, mat in (("B", sysm.B), ("C", sysm.constraint)):
        mat = sp.csr_matrix(mat)
        rows = np.repeat(np.arange(mat.shape[0]), np.diff(mat.indptr))
        bad = np.bincount(rows, weights=mat.data ** 2, minlength=mat.shape[0]) == 0
        if bad.any():
            raise SolverError(f"constraint block {name} has an empty row at node {int(np.flatnonzero(bad)[0])}")


def _relative(r, ref):
    n = np.linalg.norm(ref)
    return np.linalg.norm(r) / n if n > 0 else np.linalg.norm(r)


def solve_saddle(sysm: SaddleSystem, tol: float = 1e-12, method: str = "direct",
                 maxiter: int = 500, q0=None, u0=None):
    """Solve a saddle-point system; returns ``(u, q)``.

    ``direct`` factorises the full indefinite block matrix.  ``uzawa``
    eliminates u with inner solves on A and iterates on the multiplier; the
    Uzawa iteration is accelerated by conjugate gradients when the system is
    flagged symmetric and by GMRES otherwise.  ``nullspace`` (nodal
    constraints only) writes u_a = g_a d_a + T_a y_a with an orthonormal
    tangent basis T_a, solves the reduced system T^T A T y = T^T (f - A u_p)
    by Jacobi-preconditioned CG (GMRES if nonsymmetric) and recovers
    q_a = d_a . (f - A u)_a.
    """
    nu = sysm.A.shape[0]
    nq = sysm.B.shape[0]
    f = np.asarray(sysm.rhs_u, float)
    g = np.asarray(sysm.rhs_q, float)
    if nq == 0:
        if sysm.a_solve is not None:
            return sysm.a_solve(f), np.zeros(0)
        return spla.spsolve(sp.csc_matrix(sysm.A), f), np.zeros(0)
    _check_rank(sysm)

    if method == "direct":
        K = sp.bmat([[sysm.A, sysm.B.T], [sysm.constraint, None]], format="csc")
        try:
            lu = spla.splu(K)
        except RuntimeError as exc:
            raise SolverError(f"saddle-point factorisation failed: {exc}") from exc
        x = lu.solve(np.concatenate([f, g]))
        u, q = x[:nu], x[nu:]
    elif method == "uzawa":
        u, q = _uzawa(sysm, f, g, tol, maxiter, q0)
    elif method == "nullspace":
        u, q = _nullspace(sysm, f, g, tol, maxiter, u0)
    else:
        raise ValueError(f"unknown method {method!r}")

    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(q))):
        raise SolverError("saddle-point solve produced non-finite values")
    ru, rq = sysm.residuals(u, q)
    rel_u = _relative(ru, f) if np.any(f) else np.linalg.norm(ru)
    rel_q = _relative(rq, g) if np.any(g) else np.linalg.norm(rq)
    slack = 1e3 if method == "direct" else 1e2
    # the recovered multiplier inherits the tangential residual of the reduced solve
    if method == "nullspace":
        slack = 1e3
    if max(rel_u, rel_q) > tol * slack:
        raise SolverError(f"KKT residual too large: {rel_u:.2e} (u block), {rel_q:.2e} (q block)")
    return u, q


def _uzawa(sysm, f, g, tol, maxiter, q0):
    ainv = sysm.a_solve
    if ainv is None:
        if sysm.symmetric:
            ainv = SPDFactor(sysm.A).solve
        else:
            ainv = spla.splu(sp.csc_matrix(sysm.A)).solve
    B, C = sysm.B, sysm.constraint
    nq = B.shape[0]
    S = spla.LinearOperator((nq, nq), matvec=lambda q: C @ ainv(B.T @ q), dtype=float)
    rhs = C @ ainv(f) - g
    x0 = np.zeros(nq) if q0 is None else np.asarray(q0, float)
    P = None
    if sysm.schur_diag is not None:
        inv = 1.0 / np.asarray(sysm.schur_diag, float)
        P = spla.LinearOperator((nq, nq), matvec=lambda r: inv * r, dtype=float)
    if sysm.symmetric:
        q, info = spla.cg(S, rhs, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=P)
    else:
        q, info = spla.gmres(S, rhs, x0=x0, rtol=tol, atol=0.0, restart=min(nq, 100),
                             maxiter=maxiter, M=P)
    if info != 0:
        raise SolverError(f"Uzawa iteration did not converge within {maxiter} iterations")
    u = ainv(f - B.T @ q)
    return u, q


def tangent_basis(d) -> np.ndarray:
    """Orthonormal bases of the planes orthogonal to the unit rows of d; shape (n, m, m-1)."""
    d = np.asarray(d, float)
    n, m = d.shape
    if m == 2:
        return np.stack([-d[:, 1], d[:, 0]], axis=1)[:, :, None]
    if m != 3:
        raise ValueError(f"tangent bases need 2 or 3 components, got {m}")
    # cross with the axis least aligned with d
    e = np.zeros_like(d)
    e[np.arange(n), np.argmin(np.abs(d), axis=1)] = 1.0
    t1 = np.cross(d, e)
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(d, t1)
    return np.stack([t1, t2], axis=2)


def _nodal_blocks_diag(A, n, m):
    # diagonal of every m x m nodal block of A (component-major layout)
    out = np.empty((n, m, m))
    A = sp.csr_matrix(A)
    for c in range(m):
        for cc in range(m):
            diag = A.diagonal((cc - c) * n)
            start = c * n if cc >= c else cc * n
            out[:, c, cc] = diag[start:start + n]
    return out


def _nullspace(sysm, f, g, tol, maxiter, u0):
    d = sysm.directions
    if d is None:
        raise ValueError("the null-space solver needs the nodal directions of the constraint")
    n, m = d.shape
    T = tangent_basis(d)

    Tc = np.ascontiguousarray(np.transpose(T, (1, 2, 0)))  # (m, m-1, n)

    def lift(y):  # (n*(m-1),) -> (n*m,)
        return (Tc * y.reshape(1, m - 1, n)).sum(axis=1).ravel()

    def restrict(x):  # (n*m,) -> (n*(m-1),)
        return (Tc * x.reshape(m, 1, n)).sum(axis=0).ravel()

    A = sysm.A
    up = (g[:, None] * d).T.ravel()
    rhs = restrict(f - A @ up)
    R = spla.LinearOperator((n * (m - 1),) * 2, matvec=lambda y: restrict(A @ lift(y)), dtype=float)
    blk = _nodal_blocks_diag(A, n, m)
    rdiag = np.einsum("acj,acb,abj->ja", T, blk, T).ravel()
    P = spla.LinearOperator(R.shape, matvec=lambda r: r / rdiag, dtype=float)
    y0 = None if u0 is None else restrict(np.asarray(u0, float))
    if sysm.symmetric:
        y, info = spla.cg(R, rhs, x0=y0, rtol=tol, atol=0.0, maxiter=maxiter, M=P)
    else:
        y, info = spla.gmres(R, rhs, x0=y0, rtol=tol, atol=0.0, restart=min(R.shape[0], 100),
                             maxiter=maxiter, M=P)
    if info != 0:
        raise SolverError(f"null-space iteration did not converge within {maxiter} iterations")
    u = up + lift(y)
    r = (f - A @ u).reshape(m, n)
    q = np.einsum("ca,ac->a", r, d)
    return u, q
