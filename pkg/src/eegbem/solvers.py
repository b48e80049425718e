"""Krylov solvers with residual instrumentation, and dense spectral utilities.

All solvers start from a zero initial guess. Every ``check_every``
iterations (and whenever the recursive residual drops below the tolerance)
the true residual ``b - A x`` is recomputed; convergence is declared only on
the true residual. Those extra operator applications are counted separately
in ``SolveReport.extra_mvp``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

Operator = Callable[[np.ndarray], np.ndarray]

CHECK_EVERY = 10
SQRT_EPS = float(np.sqrt(np.finfo(float).eps))


@dataclass
class SolveReport:
    """Outcome of an iterative solve.

    Attributes
    ----------
    iterations : int
    mvp_count : int
        Operator applications made by the iteration itself (1 per CG/PCG
        iteration, 2 per CGS iteration).
    extra_mvp : int
        Operator applications spent on true-residual checks.
    residual_history : list of float
        Relative residual norm after each iteration (recursive residual,
        replaced by the true residual at check points).
    energy_history : list of float
        CG/PCG only: the quadratic functional ``x^T A x / 2 - b^T x`` after
        each iteration, which is non-increasing in exact arithmetic.
    converged : bool
    breakdown : bool
        CGS only: the recurrence hit a vanishing inner product.
    """

    iterations: int = 0
    mvp_count: int = 0
    extra_mvp: int = 0
    residual_history: list = field(default_factory=list)
    energy_history: list = field(default_factory=list)
    converged: bool = False
    breakdown: bool = False
    wall_time: float = 0.0

    @property
    def total_mvp(self) -> int:
        return self.mvp_count + self.extra_mvp

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")


def _as_operator(a) -> Operator:
    if callable(a):
        return a
    m = a
    return lambda x: m @ x


def _true_residual(apply, b, x, bnorm, report):
    report.extra_mvp += 1
    return float(np.linalg.norm(b - apply(x)) / bnorm)


def pcg(apply, apply_minv, b, tol: float = 1e-8, maxit: int | None = None,
        check_every: int = CHECK_EVERY):
    """Preconditioned conjugate gradients for SPD ``A`` and SPD ``M^-1``.

    Parameters
    ----------
    apply : callable or array
        The operator ``A``.
    apply_minv : callable, array or None
        The preconditioner ``M^-1``; None means the identity.
    b : array
    tol : float
        Target for the relative Euclidean residual ``|b - A x| / |b|``.
    maxit : int, optional
        Defaults to ``len(b)``.

    Returns
    -------
    x : array
    report : SolveReport
    """
    t0 = time.perf_counter()
    a = _as_operator(apply)
    minv = (lambda r: r) if apply_minv is None else _as_operator(apply_minv)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    maxit = n if maxit is None else maxit
    report = SolveReport()
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        report.converged = True
        report.residual_history.append(0.0)
        report.wall_time = time.perf_counter() - t0
        return x, report
    r = b.copy()
    z = minv(r)
    p = z.copy()
    rz = r @ z
    energy = 0.0
    for k in range(1, maxit + 1):
        q = a(p)
        report.mvp_count += 1
        pq = p @ q
        if pq <= 0.0:
            # operator not positive definite along p
            report.breakdown = True
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        # the functional drops by alpha^2 pq / 2 each step
        energy -= 0.5 * alpha * alpha * pq
        report.iterations = k
        report.energy_history.append(energy)
        res = float(np.linalg.norm(r) / bnorm)
        if res <= tol or k % check_every == 0:
            res = _true_residual(a, b, x, bnorm, report)
        report.residual_history.append(res)
        if res <= tol:
            report.converged = True
            break
        z = minv(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    report.wall_time = time.perf_counter() - t0
    return x, report


def cg(apply, b, tol: float = 1e-8, maxit: int | None = None,
       check_every: int = CHECK_EVERY):
    """Unpreconditioned conjugate gradients; see :func:`pcg`."""
    return pcg(apply, None, b, tol, maxit, check_every)


def cgs(apply, b, tol: float = 1e-8, maxit: int | None = None,
        check_every: int = CHECK_EVERY, breakdown_tol: float = 1e-300,
        shadow="random", seed: int = 0, reliable: float | None = SQRT_EPS):
    """Conjugate gradient squared for a nonsingular, possibly nonsymmetric ``A``.

    Two operator applications per iteration. A vanishing ``rho`` or
    ``sigma`` inner product, or a non-finite residual, stops the iteration
    with ``breakdown`` set; exhausting ``maxit`` without breakdown is
    reported as plain non-convergence.

    Parameters
    ----------
    shadow : {"random", "residual"} or array
        Fixed shadow residual. ``"residual"`` uses ``b`` itself, the textbook
        choice; for a symmetric indefinite ``A`` that makes the underlying
        biorthogonal recurrence collapse to CG on an indefinite matrix, which
        is then squared and tends to blow up. ``"random"`` draws a standard
        normal vector from a generator seeded with ``seed``, so runs stay
        reproducible.
    reliable : float or None
        Reliable updating (van der Vorst and Ye). Once the recursive residual
        has fallen by this factor below its peak since the last update, the
        iterate is added to a running sum, the residual is recomputed as
        ``b - A x`` and the peak is reset. Without it the squared recurrence
        stalls at a true residual of a few 1e-9 on the larger head systems.
        Each update costs one operator application, counted in ``extra_mvp``.
        None disables it.
    """
    t0 = time.perf_counter()
    a = _as_operator(apply)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    maxit = 2 * n if maxit is None else maxit
    report = SolveReport()
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        report.converged = True
        report.residual_history.append(0.0)
        report.wall_time = time.perf_counter() - t0
        return x, report
    r = b.copy()
    if isinstance(shadow, str):
        if shadow == "residual":
            rt = r.copy()
        elif shadow == "random":
            rt = np.random.default_rng(seed).standard_normal(n)
        else:
            raise ValueError(f"unknown shadow {shadow!r}")
    else:
        rt = np.asarray(shadow, dtype=float).copy()
        if rt.shape != b.shape:
            raise ValueError("shadow residual has the wrong shape")
    xg = np.zeros_like(b)
    peak = bnorm
    rho_old = 1.0
    u = np.zeros_like(b)
    p = np.zeros_like(b)
    q = np.zeros_like(b)
    for k in range(1, maxit + 1):
        rho = rt @ r
        if abs(rho) <= breakdown_tol * bnorm**2:
            report.breakdown = True
            break
        if k == 1:
            u = r.copy()
            p = u.copy()
        else:
            beta = rho / rho_old
            u = r + beta * q
            p = u + beta * (q + beta * p)
        v = a(p)
        report.mvp_count += 1
        sig = rt @ v
        if abs(sig) <= breakdown_tol * bnorm**2:
            report.breakdown = True
            break
        alpha = rho / sig
        q = u - alpha * v
        w = u + q
        x += alpha * w
        r -= alpha * a(w)
        report.mvp_count += 1
        rho_old = rho
        report.iterations = k
        rnorm = float(np.linalg.norm(r))
        peak = max(peak, rnorm)
        exact = reliable is not None and rnorm <= reliable * peak
        if exact:
            xg += x
            x[:] = 0.0
            r = b - a(xg)
            report.extra_mvp += 1
            rnorm = peak = float(np.linalg.norm(r))
        res = rnorm / bnorm
        if not exact and (res <= tol or k % check_every == 0):
            res = _true_residual(a, b, xg + x, bnorm, report)
        report.residual_history.append(res)
        if res <= tol:
            report.converged = True
            break
        if not np.isfinite(res):
            report.breakdown = True
            break
    report.wall_time = time.perf_counter() - t0
    return xg + x, report


def condition_number(matrix) -> float:
    """Ratio of the largest to the smallest singular value (2-norm condition).

    Symmetric input uses eigenvalue magnitudes, which equal the singular
    values and are cheaper to obtain.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("square matrix required")
    s = spectrum(m, symmetric=_is_symmetric(m), magnitudes=True)
    if s[0] == 0.0:
        return float("inf")
    return float(s[-1] / s[0])


def _is_symmetric(m: np.ndarray, rtol: float = 1e-12) -> bool:
    return bool(np.linalg.norm(m - m.T) <= rtol * np.linalg.norm(m))


def spectrum(matrix, symmetric: bool = False, *, magnitudes: bool = False,
             mass=None) -> np.ndarray:
    """Full ascending spectrum of a dense matrix.

    Parameters
    ----------
    symmetric : bool
        Return eigenvalues (via a symmetric eigensolver); otherwise singular
        values.
    magnitudes : bool
        With ``symmetric``, return sorted absolute eigenvalues.
    mass : array, optional
        SPD matrix for the generalized symmetric problem ``A v = lam B v``.
    """
    m = np.asarray(matrix, dtype=float)
    if symmetric:
        ev = sla.eigh(m, mass, eigvals_only=True) if mass is not None else sla.eigvalsh(m)
        return np.sort(np.abs(ev)) if magnitudes else np.sort(ev)
    if mass is not None:
        raise ValueError("a mass matrix needs symmetric=True")
    return np.sort(sla.svdvals(m))
