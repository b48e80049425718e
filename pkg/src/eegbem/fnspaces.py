"""Patch, pyramid and dual-pyramid function spaces and their Gram matrices.

Kinds are written with ASCII names: ``"pp"`` (patch/patch), ``"ll"``
(pyramid/pyramid), ``"dp"`` (dual pyramid/patch) and ``"dd"`` (dual/dual).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import RefinedMesh, TriangleMesh

KINDS = ("pp", "ll", "dp", "dd")
_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass(eq=False)
class GramMatrix:
    """Gram matrix of one interface.

    Attributes
    ----------
    kind : str
        One of ``KINDS``.
    matrix : scipy.sparse.csc_matrix
        Row index follows the first space in ``kind``.
    mesh_id : int or None
    """

    kind: str
    matrix: sp.csc_matrix
    mesh_id: int | None = None
    _lu: object = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    def factor(self):
        if self._lu is None:
            if self.kind == "pp":
                self._lu = ("diag", self.matrix.diagonal())
            else:
                try:
                    self._lu = ("lu", splu(sp.csc_matrix(self.matrix)))
                except RuntimeError as exc:
                    raise np.linalg.LinAlgError(f"Gram matrix '{self.kind}' is singular") from exc
        return self._lu

    def solve(self, x, trans: bool = False):
        kind, f = self.factor()
        if kind == "diag":
            d = f if np.ndim(x) == 1 else f[:, None]
            return x / d
        return f.solve(np.asarray(x, dtype=float), trans="T" if trans else "N")


def _p1_mass(mesh: TriangleMesh) -> sp.csc_matrix:
    c = mesh.cells
    vals = mesh.areas[:, None, None] * _LOCAL_MASS[None]
    rows = np.repeat(c, 3, axis=1).ravel()
    cols = np.tile(c, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csc_matrix((vals.ravel(), (rows, cols)), shape=(n, n))


def _p1_p0(mesh: TriangleMesh) -> sp.csc_matrix:
    """Integrals of pyramid m over cell n, shape (n_vertices, n_cells)."""
    rows = mesh.cells.ravel()
    cols = np.repeat(np.arange(mesh.n_cells), 3)
    vals = np.repeat(mesh.areas / 3.0, 3)
    return sp.csc_matrix((vals, (rows, cols)), shape=(mesh.n_vertices, mesh.n_cells))


def gram(mesh: TriangleMesh, refined: RefinedMesh | None = None, kind: str = "ll",
         mesh_id: int | None = None) -> GramMatrix:
    """Assemble the Gram matrix of the requested pair of spaces.

    Integrals involving dual pyramids are exact integrals of piecewise-linear
    products on the barycentric refinement, pulled back through the 1/NoC
    coefficient map.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown Gram kind {kind!r}")
    if kind in ("dp", "dd"):
        if refined is None:
            raise ValueError(f"Gram kind {kind!r} requires the barycentric refinement")
        if refined.primal is not mesh:
            raise ValueError("refined mesh does not belong to this mesh")
    if kind == "pp":
        m = sp.diags(mesh.areas).tocsc()
    elif kind == "ll":
        m = _p1_mass(mesh)
    elif kind == "dp":
        a = refined.dual_map
        fine = _p1_p0(refined.mesh)
        parent = sp.csc_matrix((np.ones(refined.mesh.n_cells),
                                (np.arange(refined.mesh.n_cells), refined.parent_cell)),
                               shape=(refined.mesh.n_cells, mesh.n_cells))
        m = (a.T @ fine @ parent).tocsc()
    else:
        a = refined.dual_map
        m = (a.T @ _p1_mass(refined.mesh) @ a).tocsc()
    return GramMatrix(kind, m, mesh_id)


def gram_inverse_apply(g: GramMatrix, x):
    """Solve ``g y = x`` with a cached sparse factorization."""
    if g.shape[0] != g.shape[1]:
        raise ValueError("Gram matrix must be square")
    return g.solve(x)


@dataclass(eq=False)
class LayerSpaces:
    """All Gram matrices of one interface, assembled once."""

    mesh: TriangleMesh
    refined: RefinedMesh
    pp: GramMatrix
    ll: GramMatrix
    dp: GramMatrix
    dd: GramMatrix

    @classmethod
    def build(cls, mesh: TriangleMesh, refined: RefinedMesh | None = None, mesh_id=None):
        from .mesh import barycentric_refine

        refined = refined if refined is not None else barycentric_refine(mesh)
        return cls(mesh, refined, *(gram(mesh, refined, k, mesh_id) for k in KINDS))
