"""Compiled loops for the closed-form panel integrals used in block assembly.

Mirrors ``quadrature.panel_potentials`` point by point; the vectorized numpy
version stays the reference used by the tests.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


def source_geometry(tri: np.ndarray):
    """Packed per-triangle data: corners, normal, area, edge directions,
    edge outward normals and barycentric gradients."""
    from .quadrature import PanelGeometry

    g = PanelGeometry(tri)
    return (np.ascontiguousarray(g.tri), np.ascontiguousarray(g.normal),
            np.ascontiguousarray(g.area), np.ascontiguousarray(g.edge_dir),
            np.ascontiguousarray(g.edge_normal), np.ascontiguousarray(g.grad))


@njit(cache=True, inline="always")
def _dot(a0, a1, a2, b0, b1, b2):
    return a0 * b0 + a1 * b1 + a2 * b2


@njit(cache=True)
def point_panel(x, t, tri, nrm, area, sdir, mnrm, grad, is_self, out3):
    """Single-layer and linear double-layer integrals of panel t at point x.

    Returns the single-layer value; writes the three double-layer moments
    into ``out3``. Kernels carry no 1/(4 pi) factor.
    """
    r = np.empty((3, 3))
    nr = np.empty(3)
    for i in range(3):
        for d in range(3):
            r[i, d] = tri[t, i, d] - x[d]
        nr[i] = math.sqrt(r[i, 0] ** 2 + r[i, 1] ** 2 + r[i, 2] ** 2)
    n0, n1, n2 = nrm[t, 0], nrm[t, 1], nrm[t, 2]
    if is_self:
        w = 0.0
        omega = 0.0
    else:
        w = _dot(r[0, 0], r[0, 1], r[0, 2], n0, n1, n2)
        c0 = r[1, 1] * r[2, 2] - r[1, 2] * r[2, 1]
        c1 = r[1, 2] * r[2, 0] - r[1, 0] * r[2, 2]
        c2 = r[1, 0] * r[2, 1] - r[1, 1] * r[2, 0]
        num = _dot(r[0, 0], r[0, 1], r[0, 2], c0, c1, c2)
        den = (nr[0] * nr[1] * nr[2]
               + _dot(r[0, 0], r[0, 1], r[0, 2], r[1, 0], r[1, 1], r[1, 2]) * nr[2]
               + _dot(r[0, 0], r[0, 1], r[0, 2], r[2, 0], r[2, 1], r[2, 2]) * nr[1]
               + _dot(r[1, 0], r[1, 1], r[1, 2], r[2, 0], r[2, 1], r[2, 2]) * nr[0])
        omega = 2.0 * math.atan2(num, den)
    single = -w * omega
    mg0 = 0.0
    mg1 = 0.0
    mg2 = 0.0
    for k in range(3):
        a = (k + 1) % 3
        b = (k + 2) % 3
        s0, s1, s2 = sdir[t, k, 0], sdir[t, k, 1], sdir[t, k, 2]
        la = _dot(r[a, 0], r[a, 1], r[a, 2], s0, s1, s2)
        lb = _dot(r[b, 0], r[b, 1], r[b, 2], s0, s1, s2)
        pe = _dot(r[a, 0], r[a, 1], r[a, 2], mnrm[t, k, 0], mnrm[t, k, 1], mnrm[t, k, 2])
        gam = 0.0
        if pe * pe + w * w > 0.0:
            if la + lb >= 0.0:
                if nr[a] + la > 0.0:
                    gam = math.log((nr[b] + lb) / (nr[a] + la))
            elif nr[b] - lb > 0.0:
                gam = math.log((nr[a] - la) / (nr[b] - lb))
        single += pe * gam
        mg0 += mnrm[t, k, 0] * gam
        mg1 += mnrm[t, k, 1] * gam
        mg2 += mnrm[t, k, 2] * gam
    for k in range(3):
        a = (k + 1) % 3
        b = (k + 2) % 3
        # barycentric coordinate of the projection: n.(r_a x r_b) / (2A)
        cx = r[a, 1] * r[b, 2] - r[a, 2] * r[b, 1]
        cy = r[a, 2] * r[b, 0] - r[a, 0] * r[b, 2]
        cz = r[a, 0] * r[b, 1] - r[a, 1] * r[b, 0]
        lam = _dot(cx, cy, cz, n0, n1, n2) / (2.0 * area[t])
        out3[k] = lam * omega - w * _dot(grad[t, k, 0], grad[t, k, 1], grad[t, k, 2], mg0, mg1, mg2)
    return single


@njit(cache=True)
def assemble_cells(pts, wts, owner_offset, same, tri, nrm, area, sdir, mnrm, grad, s, dcell):
    """Accumulate outer-rule sums into ``s`` (tc, sc) and ``dcell`` (tc, sc, 3).

    ``pts`` has shape (tc, q, 3) and ``wts`` (tc, q) (area-scaled weights);
    test cell i has global index ``owner_offset + i`` for the self-panel test.
    """
    tc, q = wts.shape
    sc = tri.shape[0]
    out3 = np.empty(3)
    for i in range(tc):
        for j in range(sc):
            is_self = same and (owner_offset + i == j)
            acc = 0.0
            d0 = 0.0
            d1 = 0.0
            d2 = 0.0
            for a in range(q):
                v = point_panel(pts[i, a], j, tri, nrm, area, sdir, mnrm, grad, is_self, out3)
                acc += wts[i, a] * v
                d0 += wts[i, a] * out3[0]
                d1 += wts[i, a] * out3[1]
                d2 += wts[i, a] * out3[2]
            s[i, j] = acc
            dcell[i, j, 0] = d0
            dcell[i, j, 1] = d1
            dcell[i, j, 2] = d2


@njit(cache=True)
def assemble_pairs(pairs, pts, wts, same, tri, nrm, area, sdir, mnrm, grad, s, dcell):
    """Recompute selected (test, source) pairs with a per-pair outer rule.

    ``pts`` has shape (tc, q, 3) with the refined rule for every test cell;
    only the listed pairs are evaluated and overwritten.
    """
    q = wts.shape[1]
    out3 = np.empty(3)
    for p in range(pairs.shape[0]):
        i = pairs[p, 0]
        j = pairs[p, 1]
        is_self = same and (i == j)
        acc = 0.0
        d0 = 0.0
        d1 = 0.0
        d2 = 0.0
        for a in range(q):
            v = point_panel(pts[i, a], j, tri, nrm, area, sdir, mnrm, grad, is_self, out3)
            acc += wts[i, a] * v
            d0 += wts[i, a] * out3[0]
            d1 += wts[i, a] * out3[1]
            d2 += wts[i, a] * out3[2]
        s[i, j] = acc
        dcell[i, j, 0] = d0
        dcell[i, j, 1] = d1
        dcell[i, j, 2] = d2
