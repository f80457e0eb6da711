"""Structured simplicial meshes on rectangles and boxes.

Vertices are numbered lexicographically with x running fastest.  In 2D every
rectangle of the tensor grid is cut along one diagonal; the diagonal direction
alternates in a checkerboard over the parity of ``i + j (+ phase)``.  In 3D
every box is split into the six Kuhn tetrahedra that share the main diagonal
from its lower corner to its upper corner::

    v000 -> v000 + e_p -> v000 + e_p + e_q -> v111     (p, q, r) a permutation

The Kuhn split induces the same face diagonals on both sides of every box
face, so the resulting triangulation is conforming.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

BOUNDARY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial mesh.

    ``vertices`` has shape (nv, dim), ``cells`` shape (nc, dim + 1) with
    positively oriented vertex order.
    """

    dimension: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_vertex: np.ndarray
    domain_box: tuple
    spacing: tuple

    def __post_init__(self):
        for arr in (self.vertices, self.cells, self.boundary_vertex):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_vertex)

    def cell_volumes(self) -> np.ndarray:
        """Signed volumes (positive for a valid mesh)."""
        X = self.vertices[self.cells]
        J = X[:, 1:, :] - X[:, :1, :]
        fact = 2.0 if self.dimension == 2 else 6.0
        return np.linalg.det(J) / fact

    def cell_diameters(self) -> np.ndarray:
        X = self.vertices[self.cells]
        d = np.zeros(self.n_cells)
        for a, b in itertools.combinations(range(self.dimension + 1), 2):
            d = np.maximum(d, np.linalg.norm(X[:, a] - X[:, b], axis=1))
        return d

    @property
    def h(self) -> float:
        return float(self.cell_diameters().max())

    def quasi_uniformity(self) -> float:
        d = self.cell_diameters()
        return float(d.max() / d.min())

    def box_volume(self) -> float:
        lo, hi = self.domain_box
        return float(np.prod(np.asarray(hi) - np.asarray(lo)))

    def locate(self, x, tol=1e-12) -> np.ndarray:
        """Indices of all cells whose closure contains the point ``x``."""
        x = np.asarray(x, dtype=float)
        X = self.vertices[self.cells]
        J = X[:, 1:, :] - X[:, :1, :]
        lam = np.linalg.solve(np.transpose(J, (0, 2, 1)), (x - X[:, 0, :])[..., None])[..., 0]
        lam0 = 1.0 - lam.sum(axis=1)
        inside = (lam.min(axis=1) >= -tol) & (lam0 >= -tol)
        return np.flatnonzero(inside)

    def dump(self, path) -> None:
        """Write ``dim nv nc``, then vertex lines, then 0-based cell lines."""
        with open(path, "w") as fh:
            fh.write(f"{self.dimension} {self.n_vertices} {self.n_cells}\n")
            for v in self.vertices:
                fh.write(" ".join(repr(float(c)) for c in v) + "\n")
            for c in self.cells:
                fh.write(" ".join(str(int(i)) for i in c) + "\n")


def load_mesh(path) -> Mesh:
    with open(path) as fh:
        dim, nv, nc = (int(t) for t in fh.readline().split())
        verts = np.array([[float(t) for t in fh.readline().split()] for _ in range(nv)])
        cells = np.array([[int(t) for t in fh.readline().split()] for _ in range(nc)], dtype=np.int64)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    return Mesh(dim, verts, cells, _boundary_flags(verts, lo, hi),
                (tuple(lo), tuple(hi)), tuple(np.full(dim, np.nan)))


def _boundary_flags(verts, lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    on = (np.abs(verts - lo) <= BOUNDARY_TOL) | (np.abs(verts - hi) <= BOUNDARY_TOL)
    return on.any(axis=1)


def _axis(n, lo, hi):
    if n < 1:
        raise ValueError(f"number of subdivisions must be >= 1, got {n}")
    return np.linspace(lo, hi, n + 1)


def build_structured_2d(nx: int, ny: int, box=((0.0, 0.0), (1.0, 1.0)), phase: int = 0,
                        pattern: str = "alternating") -> Mesh:
    """Structured triangulation of a rectangle.

    With ``pattern="alternating"`` rectangle (i, j) uses the diagonal
    v(i,j)--v(i+1,j+1) when ``(i + j + phase)`` is even and
    v(i+1,j)--v(i,j+1) otherwise.  ``pattern="uniform"`` cuts every
    rectangle the same way (the first diagonal for even ``phase``).
    """
    (x0, y0), (x1, y1) = box
    xs, ys = _axis(nx, x0, x1), _axis(ny, y0, y1)
    X, Y = np.meshgrid(xs, ys)  # row j holds y_j, x fastest after ravel
    verts = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10, v01 = v00 + 1, v00 + nx + 1
    v11 = v01 + 1
    if pattern == "alternating":
        even = (i + j + phase) % 2 == 0
    elif pattern == "uniform":
        even = np.full(i.shape, phase % 2 == 0)
    else:
        raise ValueError(f"unknown diagonal pattern {pattern!r}")
    first = np.where(even[:, None], np.column_stack([v00, v10, v11]), np.column_stack([v00, v10, v01]))
    second = np.where(even[:, None], np.column_stack([v00, v11, v01]), np.column_stack([v10, v11, v01]))
    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    cells[0::2], cells[1::2] = first, second

    return Mesh(2, verts, cells, _boundary_flags(verts, (x0, y0), (x1, y1)),
                ((x0, y0), (x1, y1)), ((x1 - x0) / nx, (y1 - y0) / ny))


_KUHN = []
for _perm in itertools.permutations(range(3)):
    _corner = np.zeros(3, dtype=int)
    _path = [tuple(_corner)]
    for _ax in _perm:
        _corner = _corner.copy()
        _corner[_ax] = 1
        _path.append(tuple(_corner))
    _KUHN.append(_path)


def build_structured_3d(nx: int, ny: int, nz: int,
                        box=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))) -> Mesh:
    """Structured tetrahedral mesh of a box, six Kuhn tetrahedra per cell."""
    lo, hi = box
    xs, ys, zs = _axis(nx, lo[0], hi[0]), _axis(ny, lo[1], hi[1]), _axis(nz, lo[2], hi[2])
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()

    def vid(di, dj, dk):
        return ((k + dk) * (ny + 1) + (j + dj)) * (nx + 1) + (i + di)

    tets = []
    for path in _KUHN:
        tets.append(np.column_stack([vid(*c) for c in path]))
    cells = np.stack(tets, axis=1).reshape(-1, 4).astype(np.int64)

    # odd permutations come out negatively oriented
    X4 = verts[cells]
    det = np.linalg.det(X4[:, 1:, :] - X4[:, :1, :])
    neg = det < 0
    cells[neg, 2], cells[neg, 3] = cells[neg, 3].copy(), cells[neg, 2].copy()

    spacing = tuple((hi[a] - lo[a]) / n for a, n in enumerate((nx, ny, nz)))
    return Mesh(3, verts, cells, _boundary_flags(verts, lo, hi), (tuple(lo), tuple(hi)), spacing)


def check_h5(mesh: Mesh, stiffness, tol: float = 1e-14):
    """Check the nonobtuse condition: every off-diagonal stiffness entry <= tol.

    Returns ``(ok, violations)`` with ``violations`` a list of vertex pairs
    ``(a, b)``, ``a < b``.
    """
    if stiffness.shape != (mesh.n_vertices, mesh.n_vertices):
        raise ValueError(
            f"stiffness shape {stiffness.shape} does not match mesh with {mesh.n_vertices} vertices")
    S = stiffness.tocoo()
    bad = (S.row < S.col) & (S.data > tol)
    pairs = sorted(zip(S.row[bad].tolist(), S.col[bad].tolist()))
    return len(pairs) == 0, pairs
