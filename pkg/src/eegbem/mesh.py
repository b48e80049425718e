"""Closed triangulated interfaces, barycentric refinement and OFF file IO."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

MAX_SUBDIVISIONS = 6


class MeshError(ValueError):
    """Raised when a triangulation violates the closed-surface invariants."""


class MeshFormatError(ValueError):
    """Raised when an OFF file cannot be parsed.

    Attributes
    ----------
    lineno : int or None
        1-based line number of the offending line, if known.
    """

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Closed, consistently oriented triangulation of one interface.

    Parameters
    ----------
    vertices : (n_vertices, 3) array
        Vertex coordinates in meters.
    cells : (n_cells, 3) int array
        Vertex indices of each triangle, counter-clockwise when seen from
        the side the normal points to.
    outward : bool
        Whether the normals point out of the enclosed volume. Set by
        ``validate``/constructors; operators assume outward normals.
    check : bool
        Run the manifold, orientation and area checks on construction.
    """

    vertices: np.ndarray
    cells: np.ndarray
    outward: bool = True
    check: bool = True

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        c = np.ascontiguousarray(self.cells, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must have shape (n, 3)")
        if c.ndim != 2 or c.shape[1] != 3:
            raise MeshError("cells must have shape (m, 3)")
        v.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "cells", c)
        if self.check:
            self._validate()

    def _validate(self):
        c = self.cells
        if c.size and (c.min() < 0 or c.max() >= len(self.vertices)):
            raise MeshError("cell references a vertex index out of range")
        bad = np.flatnonzero(self.areas <= 0.0)
        if bad.size:
            raise MeshError(f"degenerate cell {bad[0]} (zero area)")
        # directed half-edges must be unique and each must have its reverse
        he = self.halfedges
        key = he[:, 0] * len(self.vertices) + he[:, 1]
        if np.unique(key).size != key.size:
            raise MeshError("inconsistent orientation or non-manifold edge")
        rkey = he[:, 1] * len(self.vertices) + he[:, 0]
        if not np.all(np.isin(rkey, key)):
            raise MeshError("surface is not closed (boundary edge found)")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def halfedges(self) -> np.ndarray:
        """Directed edges (a, b) of every cell, shape (3*n_cells, 2)."""
        c = self.cells
        return np.stack([c, np.roll(c, -1, axis=1)], axis=-1).reshape(-1, 2)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges sorted by (min, max) index."""
        he = np.sort(self.halfedges, axis=1)
        return np.unique(he, axis=0)

    @cached_property
    def cell_edges(self) -> np.ndarray:
        """Index into ``edges`` of the edge opposite local vertex k of each cell.

        Edge k of a cell joins local vertices k+1 and k+2.
        """
        c = self.cells
        a = np.roll(c, -1, axis=1)
        b = np.roll(c, -2, axis=1)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        n = self.n_vertices
        ekey = self.edges[:, 0] * n + self.edges[:, 1]
        return np.searchsorted(ekey, lo * n + hi)

    @cached_property
    def triangles(self) -> np.ndarray:
        """Cell corner coordinates, shape (n_cells, 3, 3)."""
        return self.vertices[self.cells]

    @cached_property
    def _cross(self) -> np.ndarray:
        t = self.triangles
        return np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        """Unit cell normals following the vertex ordering."""
        return self._cross / (2.0 * self.areas[:, None])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.triangles.mean(axis=1)

    @cached_property
    def vertex_degree(self) -> np.ndarray:
        """Number of cells containing each vertex."""
        return np.bincount(self.cells.ravel(), minlength=self.n_vertices)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @property
    def signed_volume(self) -> float:
        t = self.triangles
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    @property
    def euler(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_cells

    @property
    def characteristic_radius(self) -> float:
        """Half of the largest axis-aligned bounding-box extent."""
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return 0.5 * float(ext.max())

    def winding_number(self, points) -> np.ndarray:
        """Generalized winding number of the surface around each point.

        Close to 1 inside and 0 outside for an outward-oriented closed mesh.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        t = self.triangles
        out = np.empty(len(p))
        for k, x in enumerate(p):
            r = t - x
            n = np.linalg.norm(r, axis=2)
            num = np.einsum("ij,ij->i", r[:, 0], np.cross(r[:, 1], r[:, 2]))
            den = (n[:, 0] * n[:, 1] * n[:, 2]
                   + np.einsum("ij,ij->i", r[:, 0], r[:, 1]) * n[:, 2]
                   + np.einsum("ij,ij->i", r[:, 0], r[:, 2]) * n[:, 1]
                   + np.einsum("ij,ij->i", r[:, 1], r[:, 2]) * n[:, 0])
            out[k] = 2.0 * np.arctan2(num, den).sum() / (4.0 * np.pi)
        return out

    def distance(self, point) -> float:
        """Euclidean distance from a point to the surface."""
        return float(point_triangle_distance(np.asarray(point, dtype=float), self.triangles).min())


def point_triangle_distance(x: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Distance from point ``x`` to each triangle in ``tri`` (shape (m, 3, 3))."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1)[:, None]
    h = np.einsum("ij,ij->i", x - a, n)
    p = x - h[:, None] * n
    inside = np.ones(len(tri), dtype=bool)
    for u, v in ((a, b), (b, c), (c, a)):
        inside &= np.einsum("ij,ij->i", np.cross(v - u, p - u), n) >= 0
    d = np.where(inside, np.abs(h), np.inf)
    for u, v in ((a, b), (b, c), (c, a)):
        e = v - u
        t = np.clip(np.einsum("ij,ij->i", x - u, e) / np.einsum("ij,ij->i", e, e), 0.0, 1.0)
        d = np.minimum(d, np.linalg.norm(x - (u + t[:, None] * e), axis=1))
    return d


@dataclass(frozen=True)
class MeshStats:
    h: float
    total_area: float
    n_vertices: int
    n_cells: int
    n_edges: int
    euler: int


def mesh_stats(mesh: TriangleMesh) -> MeshStats:
    """Summary statistics; ``h`` is the mean length over unique edges."""
    return MeshStats(
        h=float(mesh.edge_lengths.mean()),
        total_area=mesh.total_area,
        n_vertices=mesh.n_vertices,
        n_cells=mesh.n_cells,
        n_edges=len(mesh.edges),
        euler=mesh.euler,
    )


def _icosahedron():
    p = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
        [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
        [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
    ], dtype=float)
    c = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return v / np.linalg.norm(v, axis=1)[:, None], c


def _midpoint_subdivide(v, c):
    """Split each triangle into four; new vertices are appended at edge midpoints."""
    nv = len(v)
    pairs = np.concatenate([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]])
    pairs = np.sort(pairs, axis=1)
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    inv = inv.ravel()
    mid = 0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]])
    m = len(c)
    m01, m12, m20 = (nv + inv[:m], nv + inv[m:2 * m], nv + inv[2 * m:])
    a, b, cc = c[:, 0], c[:, 1], c[:, 2]
    new = np.concatenate([
        np.stack([a, m01, m20], 1), np.stack([b, m12, m01], 1),
        np.stack([cc, m20, m12], 1), np.stack([m01, m12, m20], 1),
    ])
    return np.concatenate([v, mid]), new


def generate_icosphere(radius: float, subdivisions: int) -> TriangleMesh:
    """Icosahedron refined by midpoint subdivision and projected onto a sphere.

    Parameters
    ----------
    radius : float
        Sphere radius in meters.
    subdivisions : int
        Number of 1-to-4 refinement steps; gives ``20 * 4**subdivisions`` cells.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if not 0 <= subdivisions <= MAX_SUBDIVISIONS:
        raise ValueError(f"subdivisions must lie in [0, {MAX_SUBDIVISIONS}]")
    v, c = _icosahedron()
    for _ in range(subdivisions):
        v, c = _midpoint_subdivide(v, c)
        v /= np.linalg.norm(v, axis=1)[:, None]
    return TriangleMesh(radius * v, c)


def geodesic_sphere(radius: float, frequency: int) -> TriangleMesh:
    """Icosahedron with every face split into ``frequency**2`` triangles, projected.

    Gives ``20 * frequency**2`` cells, filling in refinement levels between
    the powers of two reached by :func:`generate_icosphere`.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if not 1 <= frequency <= 2**MAX_SUBDIVISIONS:
        raise ValueError(f"frequency must lie in [1, {2**MAX_SUBDIVISIONS}]")
    v0, c0 = _icosahedron()
    n = frequency
    ij = [(i, j) for j in range(n + 1) for i in range(n + 1 - j)]
    local = {key: k for k, key in enumerate(ij)}
    w = np.array([(n - i - j, i, j) for i, j in ij], dtype=float) / n
    sub = []
    for j in range(n):
        for i in range(n - j):
            sub.append((local[(i, j)], local[(i + 1, j)], local[(i, j + 1)]))
            if i + j + 1 < n:
                sub.append((local[(i + 1, j)], local[(i + 1, j + 1)], local[(i, j + 1)]))
    sub = np.array(sub)
    pts = np.einsum("qk,fkd->fqd", w, v0[c0]).reshape(-1, 3)
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    cells = (sub[None] + len(ij) * np.arange(len(c0))[:, None, None]).reshape(-1, 3)
    # faces share edge points; merge coincident copies
    _, first, inv = np.unique(np.round(pts, 9), axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    verts = pts[first[order]]
    return TriangleMesh(radius * verts, rank[inv.ravel()][cells])


def perturbed_sphere(radius: float, subdivisions: int, epsilon: float,
                     coefficients=None, *, frequency: int | None = None) -> TriangleMesh:
    """Icosphere with radial perturbation ``r = R (1 + epsilon * f(direction))``.

    ``f`` is a fixed combination of low-degree harmonics scaled so that
    ``max |f| <= 1`` over the sphere, which keeps nested surfaces built with the
    same ``epsilon`` and direction field nested.

    Parameters
    ----------
    coefficients : sequence of 4 floats, optional
        Weights of the harmonic terms ``(x^2 - y^2, 3z^2 - 1, xyz, x z)``.
    frequency : int, optional
        Use a geodesic sphere of this frequency instead of the icosphere.
    """
    if not 0 <= epsilon <= 0.15:
        raise ValueError("epsilon must lie in [0, 0.15]")
    base = generate_icosphere(1.0, subdivisions) if frequency is None else geodesic_sphere(1.0, frequency)
    u = base.vertices
    w = np.array([0.5, 0.35, 1.2, 0.4] if coefficients is None else coefficients, dtype=float)
    f = _harmonic_field(u, w) / _harmonic_bound(w)
    return TriangleMesh(radius * (1.0 + epsilon * f)[:, None] * u, base.cells)


def _harmonic_field(u, w):
    x, y, z = u.T
    return w[0] * (x**2 - y**2) + w[1] * (3 * z**2 - 1) / 2 + w[2] * 3 * x * y * z + w[3] * x * z


def _harmonic_bound(w):
    # sup over a fine sphere sampling, padded slightly to stay conservative
    u = generate_icosphere(1.0, 5).vertices
    return 1.01 * float(np.abs(_harmonic_field(u, w)).max())


VERTEX, EDGE_MIDPOINT, BARYCENTER = 0, 1, 2


@dataclass(frozen=True, eq=False)
class RefinedMesh:
    """Barycentric refinement of a primal mesh.

    Refined vertices are numbered primal vertices first, then edge midpoints
    (in the order of ``primal.edges``), then cell barycenters.

    Attributes
    ----------
    mesh : TriangleMesh
        The refined triangulation (6 cells per primal cell).
    primal : TriangleMesh
    parent_cell : (6*n_cells,) int array
    vertex_kind : int array with values VERTEX, EDGE_MIDPOINT, BARYCENTER
    noc : int array
        Number of primal cells containing each refined vertex.
    """

    mesh: TriangleMesh
    primal: TriangleMesh
    parent_cell: np.ndarray
    vertex_kind: np.ndarray
    noc: np.ndarray

    @cached_property
    def dual_map(self):
        """Sparse (n_refined_vertices, n_primal_cells) coefficient map of dual pyramids.

        Column n holds ``1/noc`` at the 7 refined vertices lying in primal
        cell n, so that dual pyramid n equals ``sum_v map[v, n] * refined_hat_v``.
        """
        from scipy.sparse import csc_matrix

        p = self.primal
        nv, ne = p.n_vertices, len(p.edges)
        rows = np.concatenate([p.cells, nv + p.cell_edges,
                               (nv + ne + np.arange(p.n_cells))[:, None]], axis=1)
        cols = np.repeat(np.arange(p.n_cells), 7)
        rows = rows.ravel()
        vals = 1.0 / self.noc[rows]
        return csc_matrix((vals, (rows, cols)), shape=(self.mesh.n_vertices, p.n_cells))


def barycentric_refine(mesh: TriangleMesh) -> RefinedMesh:
    """Split every cell into 6 triangles around its barycenter."""
    bad = np.flatnonzero(mesh.areas <= 0.0)
    if bad.size:
        raise MeshError(f"degenerate cell {bad[0]} (zero area)")
    nv, ne, nc = mesh.n_vertices, len(mesh.edges), mesh.n_cells
    e = mesh.edges
    verts = np.concatenate([
        mesh.vertices,
        0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]]),
        mesh.centroids,
    ])
    c = mesh.cells
    ce = nv + mesh.cell_edges  # midpoint opposite local vertex k
    b = nv + ne + np.arange(nc)
    v0, v1, v2 = c[:, 0], c[:, 1], c[:, 2]
    m12, m20, m01 = ce[:, 0], ce[:, 1], ce[:, 2]
    sub = np.stack([
        np.stack([v0, m01, b], 1), np.stack([m01, v1, b], 1),
        np.stack([v1, m12, b], 1), np.stack([m12, v2, b], 1),
        np.stack([v2, m20, b], 1), np.stack([m20, v0, b], 1),
    ], axis=1).reshape(-1, 3)
    kind = np.concatenate([np.full(nv, VERTEX), np.full(ne, EDGE_MIDPOINT), np.full(nc, BARYCENTER)])
    noc = np.concatenate([mesh.vertex_degree, np.full(ne, 2), np.ones(nc, dtype=np.int64)])
    refined = TriangleMesh(verts, sub, outward=mesh.outward, check=False)
    return RefinedMesh(refined, mesh, np.repeat(np.arange(nc), 6), kind, noc)


def read_off(path) -> TriangleMesh:
    """Read an ASCII OFF triangle mesh. Lines starting with '#' are ignored."""
    text = Path(path).read_text()
    lines = [(i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln]
    if not lines or not lines[0][1].startswith("OFF"):
        raise MeshFormatError("missing OFF header", lines[0][0] if lines else None)
    head_no, head = lines[0]
    rest = head[3:].split()
    items = lines[1:]
    if not rest:
        if not items:
            raise MeshFormatError("missing counts line", head_no)
        cnt_no, cnt = items[0]
        rest = cnt.split()
        items = items[1:]
    else:
        cnt_no = head_no
    try:
        nv, nc = int(rest[0]), int(rest[1])
    except (ValueError, IndexError):
        raise MeshFormatError("malformed counts line", cnt_no) from None
    if len(items) < nv + nc:
        raise MeshFormatError(f"expected {nv} vertices and {nc} cells, file too short",
                              items[-1][0] if items else cnt_no)
    verts = np.empty((nv, 3))
    for k in range(nv):
        no, ln = items[k]
        parts = ln.split()
        try:
            verts[k] = [float(s) for s in parts[:3]]
        except ValueError:
            raise MeshFormatError("malformed vertex line", no) from None
        if len(parts) < 3:
            raise MeshFormatError("malformed vertex line", no)
    cells = np.empty((nc, 3), dtype=np.int64)
    for k in range(nc):
        no, ln = items[nv + k]
        try:
            parts = [int(s) for s in ln.split()]
        except ValueError:
            raise MeshFormatError("malformed cell line", no) from None
        if not parts or parts[0] != 3 or len(parts) < 4:
            raise MeshFormatError("only triangle cells ('3 i j k') are supported", no)
        if min(parts[1:4]) < 0 or max(parts[1:4]) >= nv:
            raise MeshFormatError("vertex index out of range", no)
        cells[k] = parts[1:4]
    return TriangleMesh(verts, cells)


def write_off(mesh: TriangleMesh, path) -> None:
    """Write an ASCII OFF file with round-trip exact floats."""
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_cells} {len(mesh.edges)}\n")
        for x in mesh.vertices:
            fh.write(" ".join(repr(float(t)) for t in x) + "\n")
        for c in mesh.cells:
            fh.write(f"3 {c[0]} {c[1]} {c[2]}\n")


def mesh_io(path, direction: str = "read", mesh: TriangleMesh | None = None):
    """Read or write an OFF mesh depending on ``direction``."""
    if direction == "read":
        return read_off(path)
    if direction == "write":
        if mesh is None:
            raise ValueError("mesh is required for writing")
        write_off(mesh, path)
        return mesh
    raise ValueError("direction must be 'read' or 'write'")
