"""Galerkin matrices of the single-layer, double-layer, adjoint and hypersingular operators.

Basis pairing: S is patch/patch, D is patch test against pyramid source,
D* is pyramid test against patch source and N is pyramid/pyramid. The double
layer uses the principal value with the kernel ``d/dn' G(r, r')`` of the
source normal, so that ``D_ii 1 = -1/2 G_pp 1`` on a closed surface.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mesh import TriangleMesh
from .quadrature import FOUR_PI, triangle_rule

KINDS = ("S", "D", "Dstar", "N")
DEFAULT_OUTER_ORDER = 3
NEAR_LEVELS = 2
NEAR_FACTOR = 4.0
GRADED_NODES = 16


@dataclass(eq=False)
class OperatorBlock:
    """Dense Galerkin block between a test and a source interface."""

    kind: str
    test_mesh: int | None
    src_mesh: int | None
    matrix: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape


def composite_rule(triangles: np.ndarray, order: int, levels: int = 0):
    """Outer nodes and area weights of a triangle rule applied on ``4**levels``
    congruent sub-triangles of every cell.

    Returns
    -------
    pts : (n_cells, q * 4**levels, 3)
    wts : (n_cells, q * 4**levels)
    """
    rule = triangle_rule(order)
    bary = rule.points
    wb = rule.weights
    for _ in range(levels):
        corners = np.eye(3)
        subs = [(corners[0], (corners[0] + corners[1]) / 2, (corners[0] + corners[2]) / 2),
                ((corners[0] + corners[1]) / 2, corners[1], (corners[1] + corners[2]) / 2),
                ((corners[0] + corners[2]) / 2, (corners[1] + corners[2]) / 2, corners[2]),
                ((corners[0] + corners[1]) / 2, (corners[1] + corners[2]) / 2, (corners[0] + corners[2]) / 2)]
        bary = np.concatenate([bary @ np.array(sub) for sub in subs])
        wb = np.concatenate([wb / 4.0] * 4)
    pts = np.einsum("qk,tkd->tqd", bary, triangles)
    area = 0.5 * np.linalg.norm(np.cross(triangles[:, 1] - triangles[:, 0],
                                         triangles[:, 2] - triangles[:, 0]), axis=1)
    return np.ascontiguousarray(pts), np.ascontiguousarray(area[:, None] * wb[None])


def graded_rule(n: int = GRADED_NODES):
    """Outer rule for panels touching the source panel.

    The cell is split into three sub-triangles joining the centroid to each
    edge; each is mapped from the unit square with polynomial grading toward
    the edge (exponent 3) and toward both edge ends (exponent 2), which
    absorbs the logarithmic edge and corner singularities of the inner
    potential. Returns barycentric nodes and weights summing to 1.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    v, dv = x**3, 3.0 * x**2 * w
    den = x**2 + (1.0 - x) ** 2
    u, du = x**2 / den, 2.0 * x * (1.0 - x) / den**2 * w
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ww = np.outer(du, dv) * (1.0 - vv) * (2.0 / 3.0)
    eye = np.eye(3)
    centre = np.full(3, 1.0 / 3.0)
    pts, wts = [], []
    for k in range(3):
        a, b = eye[(k + 1) % 3], eye[(k + 2) % 3]
        edge = (1.0 - uu.ravel())[:, None] * a + uu.ravel()[:, None] * b
        pts.append((1.0 - vv.ravel())[:, None] * edge + vv.ravel()[:, None] * centre)
        wts.append(ww.ravel())
    return np.concatenate(pts), np.concatenate(wts)


def _cell_diameters(m: TriangleMesh):
    t = m.triangles
    return np.max(np.linalg.norm(t - np.roll(t, 1, axis=1), axis=2), axis=1)


def classify_pairs(test: TriangleMesh, src: TriangleMesh, same: bool, factor: float):
    """Split nearby (test cell, source cell) pairs into touching and near.

    Touching pairs share a vertex (same mesh only). Near pairs have a centroid
    distance below ``factor`` times the larger of the two cell diameters.
    """
    from scipy.spatial import cKDTree

    dt, ds = _cell_diameters(test), _cell_diameters(src)
    tree = cKDTree(src.centroids)
    radius = factor * max(dt.max(), ds.max())
    touching, near = [], []
    for i, lst in enumerate(tree.query_ball_point(test.centroids, radius)):
        if not lst:
            continue
        lst = np.asarray(sorted(lst))
        d = np.linalg.norm(src.centroids[lst] - test.centroids[i], axis=1)
        lst = lst[d < factor * np.maximum(dt[i], ds[lst])]
        if same:
            share = np.isin(src.cells[lst], test.cells[i]).any(axis=1)
            touching.extend((i, j) for j in lst[share])
            lst = lst[~share]
        near.extend((i, j) for j in lst)
    as_arr = lambda x: np.array(x, dtype=np.int64).reshape(-1, 2)  # noqa: E731
    return as_arr(touching), as_arr(near)


def single_and_double_layer(test: TriangleMesh, src: TriangleMesh, *, same: bool | None = None,
                            order: int = DEFAULT_OUTER_ORDER, near_levels: int = NEAR_LEVELS,
                            near_factor: float = NEAR_FACTOR, graded_nodes: int = GRADED_NODES):
    """Assemble the S (patch/patch) and D (patch/pyramid) blocks together.

    The inner integrals are evaluated in closed form for every pair of panels.
    The outer integral uses a fixed triangle rule of the given order, applied
    on ``4**near_levels`` sub-triangles for nearby pairs (one level less in the
    outer half of the near radius), and the graded rule
    for pairs of cells sharing a vertex.

    Returns
    -------
    s : (test.n_cells, src.n_cells) array
    d : (test.n_cells, src.n_vertices) array
    """
    from ._kernels import assemble_cells, assemble_pairs, source_geometry

    same = (test is src) if same is None else same
    geo = source_geometry(src.triangles)
    tc, sc = test.n_cells, src.n_cells
    s = np.empty((tc, sc))
    dcell = np.empty((tc, sc, 3))
    pts, wts = composite_rule(test.triangles, order)
    assemble_cells(pts, wts, 0, same, *geo, s, dcell)
    touching, near = classify_pairs(test, src, same, near_factor)
    if near_levels > 0 and len(near):
        # inner ring (below half the near radius) gets the finer subdivision
        dist = np.linalg.norm(test.centroids[near[:, 0]] - src.centroids[near[:, 1]], axis=1)
        diam = np.maximum(_cell_diameters(test)[near[:, 0]], _cell_diameters(src)[near[:, 1]])
        inner = dist < 0.5 * near_factor * diam
        for sel, levels in ((inner, near_levels), (~inner, near_levels - 1)):
            if levels > 0 and sel.any():
                pts, wts = composite_rule(test.triangles, order, levels)
                assemble_pairs(np.ascontiguousarray(near[sel]), pts, wts, same, *geo, s, dcell)
    if len(touching):
        bary, wb = graded_rule(graded_nodes)
        pts = np.ascontiguousarray(np.einsum("qk,tkd->tqd", bary, test.triangles))
        wts = np.ascontiguousarray(test.areas[:, None] * wb[None])
        assemble_pairs(touching, pts, wts, same, *geo, s, dcell)
    s /= FOUR_PI
    # the source-normal derivative of G equals -n'.(r'-r)/(4 pi R^3)
    dcell *= -1.0 / FOUR_PI
    d = dcell.reshape(tc, 3 * sc) @ _incidence(src)
    return s, np.asarray(d)


def _incidence(mesh: TriangleMesh) -> sp.csr_matrix:
    """Sparse map from (cell, local vertex) slots to global vertices."""
    rows = np.arange(3 * mesh.n_cells)
    return sp.csr_matrix((np.ones_like(rows, dtype=float), (rows, mesh.cells.ravel())),
                         shape=(3 * mesh.n_cells, mesh.n_vertices))


def surface_curls(mesh: TriangleMesh):
    """Cartesian components of the surface curl of every pyramid function.

    Returns three sparse (n_cells, n_vertices) matrices; the curl of pyramid
    m is constant on each cell and equals ``-e_m / (2 A)`` where ``e_m`` is the
    edge opposite the vertex, traversed counter-clockwise.
    """
    t = mesh.triangles
    e = np.roll(t, -2, axis=1) - np.roll(t, -1, axis=1)  # opposite local vertex k
    vals = -e / (2.0 * mesh.areas[:, None, None])
    rows = np.repeat(np.arange(mesh.n_cells), 3)
    cols = mesh.cells.ravel()
    shape = (mesh.n_cells, mesh.n_vertices)
    return [sp.csr_matrix((vals[:, :, k].ravel(), (rows, cols)), shape=shape) for k in range(3)]


def hypersingular_from_single(s: np.ndarray, test: TriangleMesh, src: TriangleMesh) -> np.ndarray:
    """Hypersingular block from the patch single-layer block via surface curls.

    ``(lambda_m, N lambda_n) = - sum_k (curl_k lambda_m, S curl_k lambda_n)``.
    """
    ct, cs = surface_curls(test), surface_curls(src)
    n = np.zeros((test.n_vertices, src.n_vertices))
    for a, b in zip(ct, cs):
        n -= np.asarray((b.T @ (a.T @ s).T).T)
    return n


def assemble_operator(kind: str, test: TriangleMesh, src: TriangleMesh, *,
                      order: int = DEFAULT_OUTER_ORDER, test_id=None, src_id=None) -> OperatorBlock:
    """Assemble one Galerkin block.

    ``Dstar`` is obtained as the transpose of ``D`` with the meshes swapped,
    which makes the adjoint relation exact.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    if kind == "Dstar":
        _, d = single_and_double_layer(src, test, order=order)
        return OperatorBlock(kind, test_id, src_id, d.T.copy())
    s, d = single_and_double_layer(test, src, order=order)
    if kind == "S":
        return OperatorBlock(kind, test_id, src_id, s)
    if kind == "D":
        return OperatorBlock(kind, test_id, src_id, d)
    return OperatorBlock(kind, test_id, src_id, hypersingular_from_single(s, test, src))


def dump_block(block: OperatorBlock, path) -> None:
    """Write a block as a one-line text header followed by row-major float64 data."""
    m = np.ascontiguousarray(block.matrix, dtype="<f8")
    header = f"{block.kind} {m.shape[0]} {m.shape[1]}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(m.tobytes())


def load_block(path) -> OperatorBlock:
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n")
    kind, rows, cols = head.decode().split()
    m = np.frombuffer(body, dtype="<f8").reshape(int(rows), int(cols)).copy()
    return OperatorBlock(kind, None, None, m)
