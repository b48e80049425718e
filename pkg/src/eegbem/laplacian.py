"""Primal and dual Laplace-Beltrami stiffness matrices and their deflated variants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fnspaces import GramMatrix
from .mesh import RefinedMesh, TriangleMesh


@dataclass(eq=False)
class LaplacianMatrix:
    """Sparse Laplace-Beltrami matrix.

    For the deflated kinds ``matrix`` holds the sparse part and ``rank_one``
    the vector ``a`` so that the full matrix is ``matrix + a a^T``.
    """

    kind: str
    matrix: sp.csc_matrix
    mesh_id: int | None = None
    rank_one: np.ndarray | None = None
    _solver: object = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    def dot(self, x):
        y = self.matrix @ x
        if self.rank_one is not None:
            a = self.rank_one
            y = y + (np.outer(a, a @ x) if np.ndim(x) == 2 else a * (a @ x))
        return y

    def toarray(self):
        m = self.matrix.toarray()
        if self.rank_one is not None:
            m += np.outer(self.rank_one, self.rank_one)
        return m

    def solve(self, g):
        """Apply the inverse of a deflated Laplacian.

        The singular sparse part is factored once with the first unknown
        pinned; the rank-one term is handled exactly by splitting the
        right-hand side into its mean-free part and its kernel component.
        """
        if self.rank_one is None:
            raise ValueError("only deflated Laplacians are invertible")
        if self._solver is None:
            m = self.matrix.tolil(copy=True)
            m[0, :] = 0.0
            m[:, 0] = 0.0
            m[0, 0] = 1.0
            self._solver = splu(m.tocsc())
        a = self.rank_one
        s = a.sum()
        g = np.asarray(g, dtype=float)
        one_d = g.ndim == 1
        g2 = g[:, None] if one_d else g
        c = g2.sum(axis=0) / s  # a . w for the solution w
        rhs = g2 - np.outer(a, c)
        rhs[0] = 0.0
        w = self._solver.solve(rhs)
        w += (c - a @ w) / s
        return w[:, 0] if one_d else w


def _cotangent_from_lengths(l0, l1, l2, area):
    """Local 3x3 stiffness of triangles from opposite-edge lengths.

    ``lk`` is the length of the edge opposite local vertex k. Entries follow
    diag |e_k|^2/(4A) and off-diagonal |e_m||e_n| cos(theta_m + theta_n)/(4A).
    """
    lens = np.stack([l0, l1, l2], axis=1)
    th = np.empty_like(lens)
    for k in range(3):
        a, b, c = lens[:, (k + 1) % 3], lens[:, (k + 2) % 3], lens[:, k]
        th[:, k] = _angle(a, b, c)
    return _stiffness_from_angles(lens, th, area)


def _angle(e1, e2, e3):
    """Angle between sides e1 and e2 of a triangle whose third side is e3."""
    return np.arccos(np.clip((e1**2 + e2**2 - e3**2) / (2.0 * e1 * e2), -1.0, 1.0))


def _stiffness_from_angles(lens, th, area):
    k = np.empty((len(area), 3, 3))
    for m in range(3):
        k[:, m, m] = lens[:, m] ** 2 / (4.0 * area)
        for n in range(3):
            if n != m:
                k[:, m, n] = lens[:, m] * lens[:, n] * np.cos(th[:, m] + th[:, n]) / (4.0 * area)
    return k


def _scatter(local, cells, n):
    rows = np.repeat(cells, 3, axis=1).ravel()
    cols = np.tile(cells, (1, 3)).ravel()
    return sp.csc_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def primal_laplacian(mesh: TriangleMesh, mesh_id=None) -> LaplacianMatrix:
    """Stiffness matrix of the pyramid functions from edge lengths and angles."""
    t = mesh.triangles
    l = [np.linalg.norm(t[:, (k + 2) % 3] - t[:, (k + 1) % 3], axis=1) for k in range(3)]
    local = _cotangent_from_lengths(*l, mesh.areas)
    return LaplacianMatrix("primal", _scatter(local, mesh.cells, mesh.n_vertices), mesh_id)


def dual_laplacian(mesh: TriangleMesh, refined: RefinedMesh, mesh_id=None) -> LaplacianMatrix:
    """Stiffness matrix of the dual pyramid functions.

    Sub-triangle geometry of the barycentric refinement is expressed through
    primal quantities only: area |c|/6, half edges, two thirds of the median
    from the primal vertex and one third of the median through the edge
    midpoint. The refined stiffness is then pulled back with the 1/NoC map.
    """
    if refined.primal is not mesh:
        raise ValueError("refined mesh does not belong to this mesh")
    nv, ne, nc = mesh.n_vertices, len(mesh.edges), mesh.n_cells
    t = mesh.triangles
    el = np.stack([np.linalg.norm(t[:, (k + 2) % 3] - t[:, (k + 1) % 3], axis=1)
                   for k in range(3)], axis=1)  # opposite vertex k
    med = 0.5 * np.sqrt(2 * np.roll(el, -1, 1) ** 2 + 2 * np.roll(el, -2, 1) ** 2 - el**2)
    sub_area = mesh.areas / 6.0
    ce = nv + mesh.cell_edges
    bary = nv + ne + np.arange(nc)
    locals_, cells_ = [], []
    for k in range(3):
        for edge in ((k + 1) % 3, (k + 2) % 3):
            # sub-triangle (primal vertex k, midpoint of edge `edge`, barycenter);
            # edge `edge` is adjacent to k and opposite primal vertex `edge`
            half_e = 0.5 * el[:, edge]          # vertex-midpoint, opposite the barycenter
            m_vert = 2.0 / 3.0 * med[:, k]      # vertex-barycenter, opposite the midpoint
            m_side = 1.0 / 3.0 * med[:, edge]   # midpoint-barycenter, opposite the vertex
            lens = np.stack([m_side, m_vert, half_e], axis=1)
            th = np.stack([
                _angle(half_e, m_vert, m_side),   # at the primal vertex
                _angle(m_side, half_e, m_vert),   # at the edge midpoint
                _angle(m_vert, m_side, half_e),   # at the barycenter
            ], axis=1)
            locals_.append(_stiffness_from_angles(lens, th, sub_area))
            cells_.append(np.stack([mesh.cells[:, k], ce[:, edge], bary], axis=1))
    fine = _scatter(np.concatenate(locals_), np.concatenate(cells_), refined.mesh.n_vertices)
    a = refined.dual_map
    return LaplacianMatrix("dual", (a.T @ fine @ a).tocsc(), mesh_id)


def deflate_laplacian(lap: LaplacianMatrix, g: GramMatrix) -> LaplacianMatrix:
    """Return ``lap + (G^T 1)(G^T 1)^T`` as a sparse matrix plus rank-one vector."""
    if lap.kind not in ("primal", "dual"):
        raise ValueError("only undeflated Laplacians can be deflated")
    expected = "ll" if lap.kind == "primal" else "dd"
    if g.kind != expected or g.shape != lap.shape:
        raise ValueError(f"{lap.kind} Laplacian needs the matching '{expected}' Gram matrix")
    a = np.asarray(g.matrix.T @ np.ones(g.shape[0])).ravel()
    return LaplacianMatrix(lap.kind + "-deflated", lap.matrix, lap.mesh_id, rank_one=a)
