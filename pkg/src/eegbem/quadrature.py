"""Triangle quadrature rules and closed-form integrals of the Laplace kernel over flat panels.

All panel routines are vectorized: observation points have shape (p, 3) and
triangles shape (t, 3, 3); results have shape (p, t) (or (p, t, 3) for the
per-vertex linear moments). Triangles are oriented counter-clockwise around
their normal ``n = (b - a) x (c - a) / |...|``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class QuadratureRule:
    """Symmetric triangle rule in barycentric coordinates.

    Attributes
    ----------
    points : (q, 3) array
        Barycentric coordinates of the nodes.
    weights : (q,) array
        Positive weights summing to 1 (multiply by the area to integrate).
    order : int
        Polynomial degree integrated exactly.
    """

    points: np.ndarray
    weights: np.ndarray
    order: int

    def map(self, triangles: np.ndarray) -> np.ndarray:
        """Physical nodes for each triangle, shape (t, q, 3)."""
        return np.einsum("qk,tkd->tqd", self.points, triangles)


def _orbit(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (b, c, a), (c, a, b)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (b, c, a), (c, a, b), (b, a, c), (a, c, b), (c, b, a)]


def _conical_product(n: int):
    """Collapsed Gauss product rule (n*n nodes, exact to degree 2n-1)."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    # Gauss-Jacobi(1,0) nodes in the collapsed direction would need scipy; weight by (1-u) instead
    u, wu = np.polynomial.legendre.leggauss(n + 1)
    u, wu = 0.5 * (u + 1.0), 0.5 * wu
    pts, wts = [], []
    for ui, wi in zip(u, wu):
        for vj, wj in zip(x, w):
            s = ui
            t = (1.0 - ui) * vj
            pts.append((1.0 - s - t, s, t))
            wts.append(2.0 * wi * wj * (1.0 - ui))
    return np.array(pts), np.array(wts)


def triangle_rule(order: int) -> QuadratureRule:
    """Positive-weight triangle rule exact for polynomials of the given degree.

    Supported orders are 1 (centroid), 2 (3 nodes), 3 (6 nodes, Strang-Fix),
    5 (7 nodes, Radon) and 7 (collapsed Gauss product, 20 nodes).
    """
    if order == 1:
        pts, wts = np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])
    elif order == 2:
        pts = np.array(_orbit(2 / 3, 1 / 6))
        wts = np.full(3, 1 / 3)
    elif order == 3:
        pts = np.array(_orbit6(0.659027622374092, 0.231933368553031))
        wts = np.full(6, 1 / 6)
    elif order == 5:
        s = np.sqrt(15.0)
        a1, a2 = (6 - s) / 21, (6 + s) / 21
        pts = np.array([(1 / 3, 1 / 3, 1 / 3)] + _orbit(a1, a1) + _orbit(a2, a2))
        wts = np.array([9 / 40] + [(155 - s) / 1200] * 3 + [(155 + s) / 1200] * 3)
    elif order == 7:
        pts, wts = _conical_product(4)
    else:
        raise ValueError(f"unsupported triangle rule order {order}; use 1, 2, 3, 5 or 7")
    return QuadratureRule(np.asarray(pts, dtype=float), np.asarray(wts, dtype=float), order)


class PanelGeometry:
    """Per-triangle quantities reused by the closed-form integrals."""

    def __init__(self, triangles: np.ndarray):
        t = np.asarray(triangles, dtype=float)
        self.tri = t
        cross = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        dbl = np.linalg.norm(cross, axis=1)
        self.area = 0.5 * dbl
        self.normal = cross / dbl[:, None]
        # edge k runs from vertex k+1 to vertex k+2 (opposite vertex k)
        a = np.roll(t, -1, axis=1)
        b = np.roll(t, -2, axis=1)
        e = b - a
        self.edge_len = np.linalg.norm(e, axis=2)
        self.edge_dir = e / self.edge_len[..., None]
        self.edge_start = a
        self.edge_end = b
        self.edge_normal = np.cross(self.edge_dir, self.normal[:, None, :])
        # tangential gradients of the barycentric functions
        self.grad = np.cross(self.normal[:, None, :], e) / dbl[:, None, None]


def _edge_terms(x: np.ndarray, g: PanelGeometry):
    """Edge line integrals of 1/R and R, and in-plane edge distances.

    Returns
    -------
    gamma : (p, t, 3)  integral of 1/|r'-x| along each edge
    big_r : (p, t, 3)  integral of |r'-x| along each edge
    pe : (p, t, 3)     signed in-plane distance to each edge line (positive inside)
    w : (p, t)         height of the panel plane above x along the normal
    """
    ra = g.edge_start[None] - x[:, None, None, :]
    rb = g.edge_end[None] - x[:, None, None, :]
    s = g.edge_dir[None]
    la = np.einsum("ptkd,ptkd->ptk", ra, s)
    lb = np.einsum("ptkd,ptkd->ptk", rb, s)
    na = np.linalg.norm(ra, axis=3)
    nb = np.linalg.norm(rb, axis=3)
    pe = np.einsum("ptkd,ptkd->ptk", ra, g.edge_normal[None])
    w = np.einsum("ptd,td->pt", g.tri[None, :, 0] - x[:, None, :], g.normal)
    r0sq = pe**2 + w[..., None] ** 2
    fwd = la + lb >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = np.where(fwd, np.log((nb + lb) / (na + la)), np.log((na - la) / (nb - lb)))
    # an observation point on the edge segment itself: only reached with zero weight
    gamma = np.where(r0sq > 0, gamma, 0.0)
    big_r = 0.5 * (lb * nb - la * na + r0sq * gamma)
    return gamma, big_r, pe, w


def _solid_angle(x: np.ndarray, g: PanelGeometry) -> np.ndarray:
    """Signed solid angle of each panel seen from each point (positive when the
    normal points away from the observer)."""
    r = g.tri[None] - x[:, None, None, :]
    n = np.linalg.norm(r, axis=3)
    r0, r1, r2 = r[:, :, 0], r[:, :, 1], r[:, :, 2]
    num = np.einsum("ptd,ptd->pt", r0, np.cross(r1, r2))
    den = (n[..., 0] * n[..., 1] * n[..., 2]
           + np.einsum("ptd,ptd->pt", r0, r1) * n[..., 2]
           + np.einsum("ptd,ptd->pt", r0, r2) * n[..., 1]
           + np.einsum("ptd,ptd->pt", r1, r2) * n[..., 0])
    return 2.0 * np.arctan2(num, den)


def _barycentric_of_projection(x, g: PanelGeometry):
    r = g.tri[None] - x[:, None, None, :]
    r1 = np.roll(r, -1, axis=2)
    r2 = np.roll(r, -2, axis=2)
    return np.einsum("ptkd,td->ptk", np.cross(r1, r2), g.normal) / (2.0 * g.area[None, :, None])


def panel_potentials(x, triangles, *, linear_single=False, self_mask=None, geometry=None):
    """Closed-form panel integrals of the Laplace kernel (without the 1/(4 pi) factor).

    Parameters
    ----------
    x : (p, 3) array
        Observation points.
    triangles : (t, 3, 3) array
    linear_single : bool
        Also return the single-layer integrals of the three barycentric functions.
    self_mask : (p, t) bool array, optional
        Marks observation points lying inside the panel itself; there the
        solid angle and height are set to zero (principal value).

    Returns
    -------
    dict with keys
        ``single`` (p, t):  integral of 1/R
        ``double`` (p, t, 3): integral of lambda_k * n.(r'-x)/R^3
        ``solid_angle`` (p, t)
        ``single_linear`` (p, t, 3) when requested
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    g = geometry if geometry is not None else PanelGeometry(triangles)
    gamma, big_r, pe, w = _edge_terms(x, g)
    omega = _solid_angle(x, g)
    if self_mask is not None:
        omega = np.where(self_mask, 0.0, omega)
        w = np.where(self_mask, 0.0, w)
    single = np.einsum("ptk,ptk->pt", pe, gamma) - w * omega
    lam = _barycentric_of_projection(x, g)
    mg = np.einsum("tkd,ptk->ptd", g.edge_normal, gamma)
    double = lam * omega[..., None] - w[..., None] * np.einsum("tkd,ptd->ptk", g.grad, mg)
    out = {"single": single, "double": double, "solid_angle": omega}
    if linear_single:
        mr = np.einsum("tkd,ptk->ptd", g.edge_normal, big_r)
        out["single_linear"] = lam * single[..., None] + np.einsum("tkd,ptd->ptk", g.grad, mr)
    return out


def _panel_diameter(tri):
    return float(max(np.linalg.norm(tri[i] - tri[j]) for i, j in ((0, 1), (1, 2), (2, 0))))


def singular_panel_integral(cell, observation, moment: str = "constant", *,
                            switch: float = 2.0, far_order: int = 7):
    """Integral of ``G(r, r') * basis(r')`` over one flat triangle.

    Uses the closed-form formulas when the observation point is closer than
    ``switch`` times the panel diameter, and a ``far_order`` triangle rule
    (refined by 4-way subdivision until converged) otherwise.

    Parameters
    ----------
    cell : (3, 3) array
        Triangle corners.
    observation : (3,) array
    moment : {"constant", "linear"}
        Constant density, or the three barycentric (per-vertex) densities.

    Returns
    -------
    float or (3,) array
    """
    tri = np.asarray(cell, dtype=float)
    x = np.asarray(observation, dtype=float)
    if not np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0])) > 0:
        raise ValueError("degenerate triangle")
    g = PanelGeometry(tri[None])
    if moment not in ("constant", "linear"):
        raise ValueError("moment must be 'constant' or 'linear'")
    diam = _panel_diameter(tri)
    from .mesh import point_triangle_distance

    dist = float(point_triangle_distance(x, tri[None])[0])
    if dist < switch * diam:
        inside = dist == 0.0
        mask = np.array([[inside]]) if inside else None
        res = panel_potentials(x[None], tri[None], linear_single=True, self_mask=mask, geometry=g)
        if moment == "constant":
            return float(res["single"][0, 0]) / FOUR_PI
        return res["single_linear"][0, 0] / FOUR_PI
    return _far_panel_integral(tri, x, moment, far_order)


def _far_panel_integral(tri, x, moment, order, levels=2):
    rule = triangle_rule(order)
    sub = tri[None]
    for _ in range(levels):
        sub = _split4(sub)
    pts = rule.map(sub)  # (s, q, 3)
    area = 0.5 * np.linalg.norm(np.cross(sub[:, 1] - sub[:, 0], sub[:, 2] - sub[:, 0]), axis=1)
    kern = 1.0 / np.linalg.norm(pts - x, axis=2) / FOUR_PI
    wk = kern * rule.weights[None] * area[:, None]
    if moment == "constant":
        return float(wk.sum())
    lam = _barycentric(tri, pts.reshape(-1, 3))
    return lam.T @ wk.ravel()


def _split4(tris):
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    return np.concatenate([np.stack(s, 1) for s in
                           ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))])


def _barycentric(tri, pts):
    t = np.array([tri[1] - tri[0], tri[2] - tri[0]]).T
    st = np.linalg.lstsq(t, (pts - tri[0]).T, rcond=None)[0]
    return np.stack([1.0 - st[0] - st[1], st[0], st[1]], axis=1)
