"""P1 operators on simplicial meshes.

Nodal fields are plain arrays: shape (nv,) for scalars and (nv, c) for
c-vector fields.  Sparse operators are ``scipy.sparse.csr_matrix``; the
lumped mass is a 1-D array ``mu`` with ``mu[a] = integral of phi_a``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .quadrature import simplex_rule

NORM_EPS = 1e-12


def basis_gradients(mesh: Mesh):
    """Constant gradients of the P1 basis on each cell and the cell volumes.

    Returns ``(G, vol)`` with ``G`` of shape (nc, dim+1, dim).
    """
    X = mesh.vertices[mesh.cells]
    J = X[:, 1:, :] - X[:, :1, :]  # rows are edge vectors
    det = np.linalg.det(J)
    fact = 2.0 if mesh.dimension == 2 else 6.0
    vol = det / fact
    if np.any(vol <= 0):
        bad = int(np.flatnonzero(vol <= 0)[0])
        raise ValueError(f"degenerate or inverted cell {bad} (volume {vol[bad]:.3e})")
    Jinv = np.linalg.inv(J)  # columns are the gradients of lambda_1..lambda_dim
    G = np.empty((mesh.n_cells, mesh.dimension + 1, mesh.dimension))
    G[:, 1:, :] = np.transpose(Jinv, (0, 2, 1))
    G[:, 0, :] = -G[:, 1:, :].sum(axis=1)
    return G, vol


def _scatter(mesh, local):
    # per-cell blocks summed in cell order; coo -> csr sums duplicates deterministically
    nloc = mesh.dimension + 1
    rows = np.repeat(mesh.cells, nloc, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, nloc)).ravel()
    n = mesh.n_vertices
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    G, vol = basis_gradients(mesh)
    local = vol[:, None, None] * np.einsum("cik,cjk->cij", G, G)
    return _scatter(mesh, local)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    _, vol = basis_gradients(mesh)
    d = mesh.dimension
    ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    local = vol[:, None, None] * ref[None, :, :]
    return _scatter(mesh, local)


def assemble_lumped_mass(mesh: Mesh) -> np.ndarray:
    _, vol = basis_gradients(mesh)
    d = mesh.dimension
    share = np.repeat(vol / (d + 1), d + 1)
    return np.bincount(mesh.cells.ravel(), weights=share, minlength=mesh.n_vertices)


def inner_h(u, v, mu) -> float:
    """Lumped inner product sum_a mu_a (u_a . v_a)."""
    u, v = np.asarray(u, float), np.asarray(v, float)
    if u.shape != v.shape or u.shape[0] != mu.shape[0]:
        raise ValueError(f"shape mismatch: {u.shape}, {v.shape}, lumped mass {mu.shape}")
    prod = u * v if u.ndim == 1 else np.einsum("ai,ai->a", u, v)
    return float(mu @ prod)


def norm_h(u, mu) -> float:
    return float(np.sqrt(inner_h(u, u, mu)))


def nodal_interpolate(f, mesh: Mesh, components: int | None = None) -> np.ndarray:
    """Evaluate ``f`` (vectorised over an (n, dim) array of points) at the vertices."""
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.asarray(f(mesh.vertices), dtype=float)
    if components is not None and components > 1 and vals.shape != (mesh.n_vertices, components):
        raise ValueError(f"expected values of shape {(mesh.n_vertices, components)}, got {vals.shape}")
    bad = ~np.isfinite(vals.reshape(mesh.n_vertices, -1)).all(axis=1)
    if bad.any():
        a = int(np.flatnonzero(bad)[0])
        raise ValueError(f"function is undefined at vertex {a} = {mesh.vertices[a].tolist()}")
    return vals


def quadrature_points(mesh: Mesh, degree: int = 4):
    """Physical quadrature points (nc, nq, dim), weights (nc, nq) and barycentrics (nq, dim+1)."""
    bary, w = simplex_rule(mesh.dimension, degree)
    X = mesh.vertices[mesh.cells]
    pts = np.einsum("qi,cid->cqd", bary, X)
    _, vol = basis_gradients(mesh)
    return pts, vol[:, None] * w[None, :], bary


def load_vector(f, mesh: Mesh, degree: int = 4) -> np.ndarray:
    """b_a = integral of f * phi_a for scalar f, by simplex quadrature."""
    pts, W, bary = quadrature_points(mesh, degree)
    fv = np.asarray(f(pts.reshape(-1, mesh.dimension)), float).reshape(pts.shape[:2])
    local = np.einsum("cq,cq,qi->ci", W, fv, bary)
    return np.bincount(mesh.cells.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)


def l2_project(f, mesh: Mesh, mass: sp.spmatrix, degree: int = 4, tol: float = 1e-12) -> np.ndarray:
    """L2 projection onto the scalar P1 space.

    ``f`` is either a callable (integrated by quadrature) or a nodal array
    (in which case the load vector is exact).
    """
    from .linsolve import solve_spd

    if callable(f):
        b = load_vector(f, mesh, degree)
    else:
        b = mass @ np.asarray(f, float)
    return solve_spd(mass, b, tol=tol)


def normalize_nodal(u, eps: float = NORM_EPS) -> np.ndarray:
    u = np.asarray(u, float)
    n = np.linalg.norm(u, axis=1)
    small = n < eps
    if small.any():
        a = int(np.flatnonzero(small)[0])
        raise ValueError(f"nodal vector at vertex {a} has norm {n[a]:.3e} < {eps:g}")
    return u / n[:, None]


def dirichlet_energy(u, K) -> float:
    """||grad u_h||^2 summed over components."""
    u = np.asarray(u, float)
    if u.ndim == 1:
        return float(u @ (K @ u))
    return float(np.einsum("ai,ai->", u, K @ u))


def cell_energies(u, mesh: Mesh) -> np.ndarray:
    """Per-cell ||grad u_h||^2_{L2(K)}."""
    G, vol = basis_gradients(mesh)
    U = np.asarray(u, float)[mesh.cells]  # (nc, d+1, c)
    if U.ndim == 2:
        U = U[..., None]
    grad = np.einsum("cik,cij->cjk", U, G)  # (nc, dim, c)
    return vol * np.einsum("cjk,cjk->c", grad, grad)


@dataclass(frozen=True, eq=False)
class Operators:
    """Operators shared by every step of a simulation on one mesh."""

    mesh: Mesh
    K: sp.csr_matrix
    M: sp.csr_matrix
    mu: np.ndarray

    @classmethod
    def build(cls, mesh: Mesh) -> "Operators":
        return cls(mesh, assemble_stiffness(mesh), assemble_mass(mesh), assemble_lumped_mass(mesh))
