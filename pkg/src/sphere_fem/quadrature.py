"""Collapsed (conical product) Gauss rules on the reference simplex."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


def _gauss_jacobi01(n, alpha):
    # nodes/weights on [0, 1] for the weight (1 - s)**alpha
    x, w = roots_jacobi(n, alpha, 0.0)
    return (1.0 + x) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int = 4):
    """Quadrature exact for polynomials of total degree ``degree``.

    Returns ``(bary, weights)``: barycentric coordinates of shape (nq, dim+1)
    and weights summing to one, so that ``|K| * sum(w * f(x_q))``
    approximates the integral over a cell ``K``.
    """
    n = degree // 2 + 1
    if dim == 2:
        s, ws = _gauss_jacobi01(n, 1)
        t, wt = _gauss_jacobi01(n, 0)
        S, T = np.meshgrid(s, t, indexing="ij")
        W = np.outer(ws, wt)
        x, y = S, T * (1 - S)
        ref = np.column_stack([x.ravel(), y.ravel()])
        w = 2.0 * W.ravel()
    elif dim == 3:
        s, ws = _gauss_jacobi01(n, 2)
        t, wt = _gauss_jacobi01(n, 1)
        r, wr = _gauss_jacobi01(n, 0)
        S, T, R = np.meshgrid(s, t, r, indexing="ij")
        W = ws[:, None, None] * wt[None, :, None] * wr[None, None, :]
        x, y, z = S, T * (1 - S), R * (1 - S) * (1 - T)
        ref = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
        w = 6.0 * W.ravel()
    else:
        raise ValueError(f"unsupported dimension {dim}")
    bary = np.column_stack([1.0 - ref.sum(axis=1), ref])
    bary.setflags(write=False)
    w.setflags(write=False)
    return bary, w
