"""Independent reference computations used by the tests.

Nothing here calls into the package's assembly code: element quantities are
obtained from the affine coordinate matrix [1 x y (z)] and integrals by a
separate quadrature, accumulated with plain Python loops.
"""
import itertools
import math

import numpy as np


def cell_measure(P):
    """|K| of a simplex from its vertex coordinates (shoelace / triple product)."""
    P = np.asarray(P, float)
    d = P.shape[1]
    E = P[1:] - P[0]
    return abs(np.linalg.det(E)) / math.factorial(d)


def p1_gradients(P):
    """Rows: gradients of the barycentric coordinates, from inv([1 x])."""
    P = np.asarray(P, float)
    T = np.hstack([np.ones((P.shape[0], 1)), P])
    C = np.linalg.inv(T)  # column i holds the coefficients of lambda_i
    return C[1:, :].T


# degree-2 rules: edge midpoints in 2D, the classical 4-point rule in 3D
_A3 = (5 + 3 * math.sqrt(5)) / 20
_B3 = (5 - math.sqrt(5)) / 20
QUAD2 = {
    2: (np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]), np.full(3, 1 / 3)),
    3: (np.array([[_A3 if i == j else _B3 for j in range(4)] for i in range(4)]), np.full(4, 0.25)),
}


def forms(vertices, cells, u, v):
    """Exact (u, v), (grad u, grad v) and int i(u . v) for P1 fields u, v (nv, c)."""
    mass = stiff = lumped = 0.0
    bary, w = QUAD2[vertices.shape[1]]
    for cell in cells:
        P = vertices[cell]
        vol = cell_measure(P)
        G = p1_gradients(P)
        U, V = u[cell], v[cell]
        for lam, wq in zip(bary, w):
            mass += vol * wq * float((lam @ U) @ (lam @ V))
        stiff += vol * float(np.sum((G.T @ U) * (G.T @ V)))
        lumped += vol / len(cell) * float(np.sum(U * V))
    return mass, stiff, lumped


def lumped_mass(vertices, cells):
    mu = np.zeros(len(vertices))
    for cell in cells:
        vol = cell_measure(vertices[cell])
        for a in cell:
            mu[a] += vol / len(cell)
    return mu


def stiffness_dict(vertices, cells):
    K = {}
    for cell in cells:
        P = vertices[cell]
        vol = cell_measure(P)
        G = p1_gradients(P)
        for i, j in itertools.product(range(len(cell)), repeat=2):
            key = (int(cell[i]), int(cell[j]))
            K[key] = K.get(key, 0.0) + vol * float(G[i] @ G[j])
    return K


def positive_offdiagonal_pairs(vertices, cells, tol=1e-14):
    K = stiffness_dict(vertices, cells)
    return sorted((a, b) for (a, b), val in K.items() if a < b and val > tol)


def hedgehog_two_cell_energy_exact(triangles, x0):
    """Exact energy of the interpolated (x - x0)/|x - x0| on the given triangles (sympy)."""
    import sympy as s

    x0 = s.Matrix(x0)
    total = 0
    for tri in triangles:
        X = [s.Matrix(p) for p in tri]
        vals = [(p - x0) / (p - x0).norm() for p in X]
        J = s.Matrix.hstack(X[1] - X[0], X[2] - X[0])
        area = abs(J.det()) / 2
        Jit = J.inv().T
        G = [-Jit * s.Matrix([1, 1]), Jit * s.Matrix([1, 0]), Jit * s.Matrix([0, 1])]
        for c in range(2):
            g = sum((vals[i][c] * G[i] for i in range(3)), s.zeros(2, 1))
            total += area * (g.T * g)[0]
    return s.nsimplify(s.simplify(total))


def euler_reference_step(u, K, mu, gamma, k):
    """Dense solve of the Euler saddle system with the multiplier as a P1 unknown.

    Built from the variational statement: unknowns u^{n+1} (component-major)
    and sigma_a; momentum rows (mu/k)(u - u^n) + gamma K u + sigma_a d_a = 0,
    constraint rows d_a . u_a = |u^n_a|.
    """
    n, m = u.shape
    K = np.asarray(K.todense()) if hasattr(K, "todense") else np.asarray(K)
    nrm = np.linalg.norm(u, axis=1)
    d = u / nrm[:, None]
    N = n * m
    A = np.zeros((N + n, N + n))
    rhs = np.zeros(N + n)
    for c in range(m):
        sl = slice(c * n, (c + 1) * n)
        A[sl, sl] = np.diag(mu / k) + gamma * K
        rhs[sl] = mu / k * u[:, c]
        A[sl, N:] = np.diag(d[:, c])
        A[N:, sl] = np.diag(d[:, c])
    rhs[N:] = nrm
    x = np.linalg.solve(A, rhs)
    return x[:N].reshape(m, n).T, x[N:]
