"""Multilayer head model, symmetric block system, deflation and dipole right-hand side.

Unknowns are ordered as all potential blocks ``V_0 .. V_{N-1}`` (pyramid
coefficients) followed by the current blocks ``p_0 .. p_{P-1}`` (patch
coefficients). With a non-conducting exterior the outermost current is zero
and never allocated, so ``P = N - 1``; with a conducting exterior ``P = N``.

Sign convention of the right-hand side: with the block matrix below, the
potential rows carry ``(lambda, dn v_i - dn v_{i+1})`` and the current rows
``(pi, v_{i+1}/sigma_{i+1} - v_i/sigma_i)``, where ``v_i`` is the free-space
potential of the sources inside layer i (unit conductivity).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .bem_operators import hypersingular_from_single, single_and_double_layer
from .fnspaces import LayerSpaces
from .mesh import barycentric_refine, mesh_stats
from .quadrature import FOUR_PI, triangle_rule


class ModelError(ValueError):
    """Invalid head model or source."""


class OperatorCache:
    """Lazily assembled S, D and N blocks between the interfaces of a model.

    Blocks depend only on geometry, so models that differ only in
    conductivities share one cache.
    """

    def __init__(self, meshes, order: int = 3):
        self.meshes = list(meshes)
        self.order = order
        self._sd: dict = {}
        self._n: dict = {}

    def sd(self, i: int, j: int):
        """(S_ij, D_ij) with test interface i and source interface j."""
        if (i, j) not in self._sd:
            s, d = single_and_double_layer(self.meshes[i], self.meshes[j],
                                           same=(i == j), order=self.order)
            if i == j:
                # remove the outer-quadrature asymmetry of the self block
                s = 0.5 * (s + s.T)
            self._sd[(i, j)] = (s, d)
        return self._sd[(i, j)]

    def S(self, i, j):
        if (i, j) not in self._sd and (j, i) in self._sd:
            return self._sd[(j, i)][0].T
        return self.sd(i, j)[0]

    def D(self, i, j):
        return self.sd(i, j)[1]

    def Dstar(self, i, j):
        """Adjoint double layer by transposition: D*_ij = D_ji^T."""
        return self.D(j, i).T

    def N(self, i, j):
        if (i, j) not in self._n:
            if (j, i) in self._n:
                return self._n[(j, i)].T
            s = self.S(i, j)
            self._n[(i, j)] = hypersingular_from_single(s, self.meshes[i], self.meshes[j])
        return self._n[(i, j)]


@dataclass(eq=False)
class HeadModel:
    """Nested closed interfaces with conductivities.

    Parameters
    ----------
    meshes : list of TriangleMesh
        Interfaces from innermost to outermost.
    conductivities : list of float
        Conductivity of the compartment inside each interface (S/m).
    radii : list of float, optional
        Characteristic radius of each interface; defaults to half the largest
        bounding-box extent.
    sigma_outer : float
        Conductivity outside the last interface; 0 for EEG (air).
    """

    meshes: list
    conductivities: list
    radii: list | None = None
    sigma_outer: float = 0.0
    order: int = 3
    check_nesting: bool = True
    cache: OperatorCache | None = field(default=None, repr=False)
    spaces: list | None = field(default=None, repr=False)

    def __post_init__(self):
        self.meshes = list(self.meshes)
        self.conductivities = [float(s) for s in self.conductivities]
        if len(self.meshes) != len(self.conductivities):
            raise ModelError("one conductivity per interface is required")
        if any(s <= 0 for s in self.conductivities):
            raise ModelError("conductivities must be positive")
        if self.sigma_outer < 0:
            raise ModelError("exterior conductivity must be non-negative")
        if self.radii is None:
            self.radii = [m.characteristic_radius for m in self.meshes]
        self.radii = [float(r) for r in self.radii]
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ModelError("radii must increase outward")
        if self.check_nesting:
            for k in range(len(self.meshes) - 1):
                inner, outer = self.meshes[k], self.meshes[k + 1]
                wn = outer.winding_number(inner.vertices[:: max(1, inner.n_vertices // 64)])
                if np.any(np.abs(wn - 1.0) > 1e-6):
                    raise ModelError(f"interface {k} is not strictly inside interface {k + 1}")
        if self.cache is None:
            self.cache = OperatorCache(self.meshes, self.order)
        if self.spaces is None:
            self.spaces = [LayerSpaces.build(m, barycentric_refine(m), mesh_id=i)
                           for i, m in enumerate(self.meshes)]

    @property
    def n_layers(self) -> int:
        return len(self.meshes)

    @property
    def n_current_blocks(self) -> int:
        return self.n_layers if self.sigma_outer > 0 else self.n_layers - 1

    def sigma(self, i: int) -> float:
        """Conductivity of compartment i (0-based); index N is the exterior."""
        return self.conductivities[i] if i < self.n_layers else self.sigma_outer

    def with_conductivities(self, conductivities, sigma_outer=None) -> "HeadModel":
        """Same geometry (sharing assembled blocks) with new conductivities."""
        return HeadModel(self.meshes, conductivities, self.radii,
                         self.sigma_outer if sigma_outer is None else sigma_outer,
                         self.order, False, self.cache, self.spaces)

    def mesh_width(self, i: int) -> float:
        return mesh_stats(self.meshes[i]).h

    @property
    def mean_mesh_width(self) -> float:
        return float(np.mean([self.mesh_width(i) for i in range(self.n_layers)]))


@dataclass(frozen=True)
class Dipole:
    """Current dipole with position (m) and moment (A m)."""

    position: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "moment", np.asarray(self.moment, dtype=float).reshape(3))

    def potential(self, r):
        """Free-space potential q.(r - r0) / (4 pi |r - r0|^3) at unit conductivity."""
        d = np.asarray(r, dtype=float) - self.position
        n = np.linalg.norm(d, axis=-1)
        return (d @ self.moment) / (FOUR_PI * n**3)

    def gradient(self, r):
        d = np.asarray(r, dtype=float) - self.position
        n = np.linalg.norm(d, axis=-1)[..., None]
        qd = (d @ self.moment)[..., None]
        return (self.moment / n**3 - 3.0 * qd * d / n**5) / FOUR_PI


@dataclass(eq=False)
class BlockSystem:
    """Dense symmetric block system with index bookkeeping.

    Attributes
    ----------
    matrix : (n, n) array
    index_map : dict
        ``(layer, "V")`` or ``(layer, "p")`` -> slice into the unknown vector.
    deflated : bool
    zeta : array or None
        Deflation vector (present when the exterior does not conduct).
    rhs : array or None
    """

    matrix: np.ndarray
    index_map: dict
    deflated: bool = False
    zeta: np.ndarray | None = None
    rhs: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def block(self, x, layer: int, space: str):
        return x[self.index_map[(layer, space)]]

    def matvec(self, x):
        return self.matrix @ x


def _index_map(model: HeadModel) -> dict:
    out, off = {}, 0
    for i in range(model.n_layers):
        n = model.meshes[i].n_vertices
        out[(i, "V")] = slice(off, off + n)
        off += n
    for i in range(model.n_current_blocks):
        n = model.meshes[i].n_cells
        out[(i, "p")] = slice(off, off + n)
        off += n
    return out


def system_size(model: HeadModel) -> int:
    return (sum(m.n_vertices for m in model.meshes)
            + sum(model.meshes[i].n_cells for i in range(model.n_current_blocks)))


def assemble_Z(model: HeadModel) -> BlockSystem:
    """Undeflated symmetric block matrix with conductivity scalings."""
    idx = _index_map(model)
    n = system_size(model)
    z = np.zeros((n, n))
    ops = model.cache
    nl, npb = model.n_layers, model.n_current_blocks
    sg = model.sigma
    for i in range(nl):
        vi = idx[(i, "V")]
        z[vi, vi] = (sg(i) + sg(i + 1)) * ops.N(i, i)
        if i + 1 < nl:
            vj = idx[(i + 1, "V")]
            blk = -sg(i + 1) * ops.N(i, i + 1)
            z[vi, vj] = blk
            z[vj, vi] = blk.T
    for i in range(npb):
        pi = idx[(i, "p")]
        z[pi, pi] = (1.0 / sg(i) + 1.0 / sg(i + 1)) * ops.S(i, i)
        if i + 1 < npb:
            pj = idx[(i + 1, "p")]
            blk = -(1.0 / sg(i + 1)) * ops.S(i, i + 1)
            z[pi, pj] = blk
            z[pj, pi] = blk.T
        for j in (i - 1, i, i + 1):
            if 0 <= j < nl:
                vj = idx[(j, "V")]
                blk = (-2.0 if j == i else 1.0) * ops.D(i, j)
                z[pi, vj] = blk
                z[vj, pi] = blk.T
    return BlockSystem(z, idx, deflated=False)


def deflation_vector(model: HeadModel) -> np.ndarray:
    """Gram-weighted all-ones vector in the outermost potential block."""
    idx = _index_map(model)
    zeta = np.zeros(system_size(model))
    last = model.n_layers - 1
    g = model.spaces[last].ll.matrix
    zeta[idx[(last, "V")]] = np.asarray(g.T @ np.ones(g.shape[0])).ravel()
    return zeta


def nullspace_vector(model: HeadModel) -> np.ndarray:
    """All-ones on every potential block, zero on the current blocks."""
    idx = _index_map(model)
    k = np.zeros(system_size(model))
    for i in range(model.n_layers):
        k[idx[(i, "V")]] = 1.0
    return k


def assemble_Zhat(model: HeadModel, z: BlockSystem | None = None) -> BlockSystem:
    """Deflated matrix ``Z + zeta zeta^T`` (unchanged when the exterior conducts)."""
    z = assemble_Z(model) if z is None else z
    if model.sigma_outer > 0:
        return BlockSystem(z.matrix, z.index_map, deflated=False)
    zeta = deflation_vector(model)
    return BlockSystem(z.matrix + np.outer(zeta, zeta), z.index_map, deflated=True, zeta=zeta)


def discrete_kernel(zhat: BlockSystem) -> np.ndarray:
    """Null vector of the undeflated ``Z``, normalized to unit norm.

    ``Z k = 0`` gives ``Zhat k = zeta (zeta^T k)``, so ``k`` is proportional
    to ``Zhat^-1 zeta``. It equals the constant potential vector only up to
    the quadrature error of the double-layer identities.
    """
    if zhat.zeta is None:
        raise ValueError("system is not deflated")
    k = sla.solve(zhat.matrix, zhat.zeta, assume_a="sym")
    return k / np.linalg.norm(k)


def compatible_rhs(model: HeadModel, zhat: BlockSystem, b, kernel=None) -> np.ndarray:
    """Make ``b`` orthogonal to the discrete kernel of ``Z``.

    The correction is an area-weighted constant on the innermost potential
    rows, as in :func:`assemble_rhs`. After it the deflated solution solves
    ``Z x = b`` and its outer potential is mean-free to solver accuracy.
    Unchanged when the exterior conducts.
    """
    b = np.array(b, dtype=float)
    if zhat.zeta is None or model.sigma_outer != 0:
        return b
    k = discrete_kernel(zhat) if kernel is None else kernel
    c = np.zeros_like(b)
    c[zhat.index_map[(0, "V")]] = np.asarray(model.spaces[0].ll.matrix @ np.ones(model.meshes[0].n_vertices)).ravel()
    return b - c * (k @ b) / (k @ c)


def check_dipole(model: HeadModel, dipole: Dipole) -> None:
    inner = model.meshes[0]
    if abs(inner.winding_number(dipole.position)[0] - 1.0) > 1e-6:
        raise ModelError("dipole must lie inside the innermost interface")
    if inner.distance(dipole.position) <= model.mesh_width(0):
        raise ModelError("dipole lies within one mesh width of the innermost interface")


def assemble_rhs(model: HeadModel, dipole: Dipole, *, order: int = 3,
                 project: bool = True) -> np.ndarray:
    """Right-hand side for a dipole in the innermost compartment.

    Only the innermost potential and current rows are non-zero. With a
    non-conducting exterior the potential rows must sum to zero (the dipole
    field carries no net flux); quadrature leaves a tiny defect, which is
    removed as an area-weighted constant when ``project`` is set.
    """
    check_dipole(model, dipole)
    mesh = model.meshes[0]
    idx = _index_map(model)
    rule = triangle_rule(order)
    pts = rule.map(mesh.triangles)
    wts = mesh.areas[:, None] * rule.weights[None]
    flux = np.einsum("tqd,td->tq", dipole.gradient(pts), mesh.normals)
    b = np.zeros(system_size(model))
    # pyramid k restricted to a cell equals the barycentric coordinate k
    bv = np.zeros(mesh.n_vertices)
    np.add.at(bv, mesh.cells, np.einsum("tq,tq,qk->tk", flux, wts, rule.points))
    if project and model.sigma_outer == 0:
        g1 = np.asarray(model.spaces[0].ll.matrix @ np.ones(mesh.n_vertices)).ravel()
        bv -= bv.sum() * g1 / g1.sum()
    b[idx[(0, "V")]] = bv
    if model.n_current_blocks > 0:
        vals = (dipole.potential(pts) * wts).sum(axis=1)
        b[idx[(0, "p")]] = -vals / model.conductivities[0]
    return b


def rhs_flux_defect(model: HeadModel, dipole: Dipole, order: int = 3) -> float:
    """Relative net flux of the unprojected right-hand side (quadrature error)."""
    b = assemble_rhs(model, dipole, order=order, project=False)
    bv = b[_index_map(model)[(0, "V")]]
    return float(abs(bv.sum()) / np.abs(bv).sum())


def cross_layer_nullspace_check(model: HeadModel, i: int) -> dict:
    """Residuals of the constant-density double-layer identities for layer i.

    Returns relative norms of ``D_{i-1,i} 1 + G_{i-1} 1``, ``D_ii 1 + G_i 1 / 2``
    and ``D_{i+1,i} 1`` (entries absent at the ends are omitted).
    """
    ops = model.cache
    ones = np.ones(model.meshes[i].n_vertices)
    out = {}
    a_i = model.meshes[i].areas
    out["self"] = float(np.linalg.norm(ops.D(i, i) @ ones + 0.5 * a_i) / np.linalg.norm(0.5 * a_i))
    if i > 0:
        a = model.meshes[i - 1].areas
        out["inner"] = float(np.linalg.norm(ops.D(i - 1, i) @ ones + a) / np.linalg.norm(a))
    if i + 1 < model.n_layers:
        a = model.meshes[i + 1].areas
        out["outer"] = float(np.linalg.norm(ops.D(i + 1, i) @ ones) / np.linalg.norm(a))
    return out


def sphere_model(radii, conductivities, subdivisions: int | None = None, *,
                 frequency: int | None = None, epsilon: float = 0.0,
                 sigma_outer: float = 0.0, order: int = 3) -> HeadModel:
    """Nested spheres (optionally radially perturbed with a shared field).

    Exactly one of ``subdivisions`` (icosphere) and ``frequency`` (geodesic
    sphere) must be given.
    """
    from .mesh import generate_icosphere, geodesic_sphere, perturbed_sphere

    if (subdivisions is None) == (frequency is None):
        raise ModelError("give exactly one of subdivisions and frequency")
    if epsilon > 0:
        meshes = [perturbed_sphere(r, subdivisions or 0, epsilon, frequency=frequency) for r in radii]
        radii_used = None
    elif frequency is not None:
        meshes = [geodesic_sphere(r, frequency) for r in radii]
        radii_used = list(radii)
    else:
        meshes = [generate_icosphere(r, subdivisions) for r in radii]
        radii_used = list(radii)
    return HeadModel(meshes, conductivities, radii_used, sigma_outer, order)


def split_solution(system: BlockSystem, x):
    """Dictionary of solution blocks keyed like ``index_map``."""
    return {k: x[s] for k, s in system.index_map.items()}
