"""Closed-form spherical references: layered-sphere dipole potential, operator
eigenvalues on a sphere, product-operator spectra and real spherical harmonics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FOUR_PI = 4.0 * np.pi


class SeriesConvergenceError(RuntimeError):
    """Raised when the truncated Legendre series has not converged."""


@dataclass(frozen=True)
class SphereModelSpec:
    """Concentric spheres, innermost first, with a non-conducting exterior.

    Attributes
    ----------
    radii : tuple of float
    conductivities : tuple of float
        Conductivity inside each sphere (compartment between it and the previous one).
    lmax : int
    tail_tol : float
        Bound on the relative contribution of the last retained degree.
    """

    radii: tuple
    conductivities: tuple
    lmax: int = 100
    tail_tol: float = 1e-8

    def __post_init__(self):
        r = tuple(float(x) for x in self.radii)
        s = tuple(float(x) for x in self.conductivities)
        if len(r) != len(s) or not r:
            raise ValueError("one conductivity per sphere is required")
        if any(b <= a for a, b in zip(r, r[1:])) or r[0] <= 0:
            raise ValueError("radii must be positive and increasing")
        if any(x <= 0 for x in s):
            raise ValueError("conductivities must be positive")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "conductivities", s)


def _transfer_factors(spec: SphereModelSpec, lmax: int) -> np.ndarray:
    """Outer-surface value of the radial solution per degree.

    In units where the outer radius is 1, compartment 1 carries the primary
    field ``rho^-(l+1)`` plus a regular part; each compartment has
    ``A rho^l + B rho^-(l+1)``; potential and normal current are continuous and
    the current vanishes at the outer surface. Returns ``f_l(1)`` for
    l = 0..lmax (entry 0 unused).
    """
    rr = np.asarray(spec.radii) / spec.radii[-1]
    sg = np.asarray(spec.conductivities)
    out = np.zeros(lmax + 1)
    for l in range(1, lmax + 1):
        # propagate two independent states (primary, regular) through the layers
        states = []
        for a, b in ((0.0, 1.0), (1.0, 0.0)):
            for k in range(len(rr) - 1):
                r = rr[k]
                f = a * r**l + b * r ** (-l - 1)
                g = sg[k] * (l * a * r**l - (l + 1) * b * r ** (-l - 1))
                # solve for the next compartment's coefficients at radius r
                g_over = g / sg[k + 1]
                a = (f * (l + 1) + g_over) / ((2 * l + 1) * r**l)
                b = (l * f - g_over) / ((2 * l + 1) * r ** (-l - 1))
            states.append((a, b))
        (ap, bp), (ah, bh) = states
        # choose the regular amplitude c so that the current vanishes at rho = 1
        gp = l * ap - (l + 1) * bp
        gh = l * ah - (l + 1) * bh
        c = -gp / gh
        out[l] = (ap + bp) + c * (ah + bh)
    return out


def _legendre_with_derivative(l_max: int, c: np.ndarray):
    p = np.zeros((l_max + 1,) + c.shape)
    dp = np.zeros_like(p)
    p[0] = 1.0
    if l_max >= 1:
        p[1] = c
        dp[1] = 1.0
    for l in range(1, l_max):
        p[l + 1] = ((2 * l + 1) * c * p[l] - l * p[l - 1]) / (l + 1)
        dp[l + 1] = dp[l - 1] + (2 * l + 1) * p[l]
    return p, dp


def sphere_forward_potential(spec: SphereModelSpec, dipole, points) -> np.ndarray:
    """Potential on the outer sphere of a dipole inside the innermost sphere.

    Parameters
    ----------
    spec : SphereModelSpec
    dipole : object with ``position`` and ``moment``
    points : (n, 3) array
        Evaluation points; only their directions are used (projected radially
        onto the outer sphere).

    Raises
    ------
    SeriesConvergenceError
        If the last retained degree still contributes more than ``tail_tol``.
    """
    r0 = np.asarray(dipole.position, dtype=float)
    q = np.asarray(dipole.moment, dtype=float)
    if np.linalg.norm(r0) >= spec.radii[0]:
        raise ValueError("dipole must lie inside the innermost sphere")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rhat = pts / np.linalg.norm(pts, axis=1)[:, None]
    big_r = spec.radii[-1]
    d0 = np.linalg.norm(r0)
    r0hat = r0 / d0 if d0 > 0 else np.array([0.0, 0.0, 1.0])
    c = rhat @ r0hat
    qr0 = q @ r0hat
    qr = rhat @ q
    lmax = spec.lmax
    p, dp = _legendre_with_derivative(lmax, c)
    fac = _transfer_factors(spec, lmax)
    t = d0 / big_r
    terms = np.zeros((lmax + 1, len(pts)))
    for l in range(1, lmax + 1):
        scale = t ** (l - 1) if l > 1 else 1.0
        ang = l * p[l] * qr0 + dp[l] * (qr - c * qr0)
        terms[l] = fac[l] * scale * ang
    total = terms.sum(axis=0)
    tail = np.abs(terms[-1]).max() / max(np.abs(total).max(), np.finfo(float).tiny)
    if tail > spec.tail_tol:
        raise SeriesConvergenceError(f"series tail {tail:.2e} exceeds {spec.tail_tol:.0e} at lmax={lmax}")
    return total / (FOUR_PI * spec.conductivities[0] * big_r**2)


def single_sphere_potential(radius: float, sigma: float, dipole, points) -> np.ndarray:
    """Closed-form surface potential of a dipole in a homogeneous sphere.

    V = [2 q.d/|d|^3 + q.(r |d| + R d) / (R |d| (R |d| + R^2 - r.r0))] / (4 pi sigma)
    with d = r - r0 and |r| = R.
    """
    r0 = np.asarray(dipole.position, dtype=float)
    q = np.asarray(dipole.moment, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = radius * pts / np.linalg.norm(pts, axis=1)[:, None]
    d = r - r0
    nd = np.linalg.norm(d, axis=1)
    first = 2.0 * (d @ q) / nd**3
    num = (r * nd[:, None] + radius * d) @ q
    den = radius * nd * (radius * nd + radius**2 - r @ r0)
    return (first + num / den) / (FOUR_PI * sigma)


def sphere_operator_eigenvalue(kind: str, l: int, radius: float) -> float:
    """Eigenvalue of S or N on a sphere for spherical harmonics of degree l."""
    if l < 0 or radius <= 0:
        raise ValueError("need l >= 0 and radius > 0")
    if kind == "S":
        return radius / (2 * l + 1)
    if kind == "N":
        return -l * (l + 1) / (radius * (2 * l + 1))
    if kind == "D":
        return -1.0 / (2 * (2 * l + 1))
    raise ValueError(f"unknown operator kind {kind!r}")


@dataclass(frozen=True)
class ProductSpectrum:
    value: float
    limit: float


def product_spectrum_prediction(kind: str, l: int, radius: float = 1.0) -> ProductSpectrum:
    """Eigenvalue of a composite operator on degree-l harmonics and its l -> inf limit.

    Kinds: ``"SLS"`` (S Lap S), ``"NLinvN"`` (N Lap^-1 N), ``"DsLD"`` (D* Lap D),
    ``"DsLS"`` (D* Lap S). The Laplacian eigenvalue is l(l+1)/R^2; its kernel
    (l = 0) gives 0 for the product with the inverse.
    """
    if l < 0:
        raise ValueError("l must be non-negative")
    lap = l * (l + 1) / radius**2
    s = sphere_operator_eigenvalue("S", l, radius)
    n = sphere_operator_eigenvalue("N", l, radius)
    d = sphere_operator_eigenvalue("D", l, radius)
    if kind == "SLS":
        return ProductSpectrum(s * lap * s, 0.25)
    if kind == "NLinvN":
        return ProductSpectrum(n * n / lap if l > 0 else 0.0, 0.25)
    if kind == "DsLD":
        return ProductSpectrum(d * lap * d, 1.0 / (16.0 * radius**2))
    if kind == "DsLS":
        return ProductSpectrum(d * lap * s, -1.0 / (8.0 * radius))
    raise ValueError(f"unknown product kind {kind!r}")


def real_spherical_harmonics(lmax: int, points) -> dict:
    """Orthonormal real spherical harmonics up to degree ``lmax`` at unit directions.

    Associated Legendre functions are built with the standard stable
    recurrences on fully normalized values (no Condon-Shortley phase).

    Returns
    -------
    dict mapping (l, m) with -l <= m <= l to arrays of values.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    u = p / np.linalg.norm(p, axis=1)[:, None]
    x = np.clip(u[:, 2], -1.0, 1.0)
    s = np.sqrt(np.maximum(0.0, 1.0 - x**2))
    phi = np.arctan2(u[:, 1], u[:, 0])
    # pbar[l][m]: normalized so that the integral of (pbar cos(m phi))^2 over the sphere is 1
    pbar = {(0, 0): np.full_like(x, np.sqrt(1.0 / FOUR_PI))}
    for m in range(1, lmax + 1):
        pbar[(m, m)] = np.sqrt((2 * m + 1) / (2.0 * m)) * s * pbar[(m - 1, m - 1)]
    for m in range(0, lmax):
        pbar[(m + 1, m)] = np.sqrt(2 * m + 3) * x * pbar[(m, m)]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            pbar[(l, m)] = a * (x * pbar[(l - 1, m)] - b * pbar[(l - 2, m)])
    out = {}
    for l in range(lmax + 1):
        out[(l, 0)] = pbar[(l, 0)]
        for m in range(1, l + 1):
            out[(l, m)] = np.sqrt(2.0) * pbar[(l, m)] * np.cos(m * phi)
            out[(l, -m)] = np.sqrt(2.0) * pbar[(l, m)] * np.sin(m * phi)
    return out
