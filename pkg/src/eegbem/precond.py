"""Refinement-free Calderon-type preconditioner for the deflated symmetric system.

The preconditioned matrix is ``Z_p = M Q Zhat Q G P G^T Q Zhat Q M`` with

* ``Q``: diagonal scaling ``q_V sqrt(R)`` on potential blocks and
  ``q_C / sqrt(R)`` on current blocks, ``q_V = max(s_i, s_i+1)^-1/2`` and
  ``q_C = min(s_i, s_i+1)^1/2``;
* ``P``: ``Lap_i^-1 / R_i^2`` (deflated primal Laplacian) on potential blocks
  and ``R_i^2 DualLap_i`` (deflated dual Laplacian) on current blocks;
* ``G``: identity on potential blocks, ``G_{dual,patch}^-1`` on current blocks;
* ``M``: ``G_mass^-1/2`` with the pyramid and patch Gram matrices.

``M`` is never formed for solving: PCG runs on ``A' = Q Zhat Q G P G^T Q Zhat Q``
with ``M^2 = G_mass^-1`` as preconditioner, which is a similarity transform of
``Z_p``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .laplacian import deflate_laplacian, dual_laplacian, primal_laplacian
from .system import BlockSystem, HeadModel


class PreconditionerError(RuntimeError):
    """A factorization needed by the preconditioner failed."""


@dataclass(frozen=True)
class ScalingCoefficients:
    """Per-layer principal-part coefficients of the preconditioned matrix.

    ``epsilon`` and ``gamma`` multiply compact blocks and do not enter the
    eigenvalue prediction; they are reported for completeness.
    """

    alpha: np.ndarray
    beta: np.ndarray
    delta: np.ndarray
    eta: np.ndarray
    epsilon: np.ndarray
    gamma: np.ndarray


@dataclass(eq=False)
class PreconditionerParts:
    """Factors of ``Z_p`` with cached factorizations.

    Attributes
    ----------
    q : array
        Diagonal of ``Q`` over the full unknown vector.
    lap : list
        Deflated primal Laplacians per layer.
    dual_lap : list
        Deflated dual Laplacians per current block.
    radii : list of float
    index_map : dict
    spaces : list of LayerSpaces
    q_v, q_c : arrays
        Per-layer scaling constants.
    """

    q: np.ndarray
    lap: list
    dual_lap: list
    radii: list
    index_map: dict
    spaces: list
    q_v: np.ndarray
    q_c: np.ndarray
    n_layers: int
    n_current: int

    # --- block pieces -------------------------------------------------
    def apply_P(self, x):
        y = np.empty_like(x)
        for i in range(self.n_layers):
            s = self.index_map[(i, "V")]
            y[s] = self.lap[i].solve(x[s]) / self.radii[i] ** 2
        for i in range(self.n_current):
            s = self.index_map[(i, "p")]
            y[s] = self.radii[i] ** 2 * self.dual_lap[i].dot(x[s])
        return y

    def apply_G(self, x, transpose: bool = False):
        y = x.copy()
        for i in range(self.n_current):
            s = self.index_map[(i, "p")]
            y[s] = self.spaces[i].dp.solve(x[s], trans=transpose)
        return y

    def apply_mass(self, x, inverse: bool = False):
        """Multiply by the block Gram matrix ``M^-2`` (or its inverse ``M^2``)."""
        y = np.empty_like(x)
        for (i, kind), s in self.index_map.items():
            g = self.spaces[i].ll if kind == "V" else self.spaces[i].pp
            y[s] = g.solve(x[s]) if inverse else g.matrix @ x[s]
        return y

    def apply_Minv2(self, x):
        """PCG preconditioner ``M^2 = G_mass^-1``."""
        return self.apply_mass(x, inverse=True)

    def dense_mass(self) -> np.ndarray:
        n = len(self.q)
        out = np.zeros((n, n))
        for (i, kind), s in self.index_map.items():
            g = self.spaces[i].ll if kind == "V" else self.spaces[i].pp
            out[s, s] = g.matrix.toarray()
        return out

    def dense_M(self) -> np.ndarray:
        """Dense ``G_mass^-1/2`` by symmetric eigendecomposition (verification only)."""
        w, v = np.linalg.eigh(self.dense_mass())
        return (v / np.sqrt(w)) @ v.T


def scaling_constants(model: HeadModel):
    """``q_V`` per layer and ``q_C`` per current block."""
    q_v = np.array([max(model.sigma(i), model.sigma(i + 1)) ** -0.5
                    for i in range(model.n_layers)])
    q_c = np.array([min(model.sigma(i), model.sigma(i + 1)) ** 0.5
                    for i in range(model.n_current_blocks)])
    return q_v, q_c


def build_preconditioner(model: HeadModel, zhat: BlockSystem) -> PreconditionerParts:
    """Assemble Q, P and G and factor every sparse matrix involved."""
    if model.sigma_outer == 0 and not zhat.deflated:
        raise ValueError("the preconditioner needs the deflated matrix")
    q_v, q_c = scaling_constants(model)
    radii = list(model.radii)
    q = np.empty(zhat.size)
    for i in range(model.n_layers):
        q[zhat.index_map[(i, "V")]] = q_v[i] * np.sqrt(radii[i])
    for i in range(model.n_current_blocks):
        q[zhat.index_map[(i, "p")]] = q_c[i] / np.sqrt(radii[i])
    laps, duals = [], []
    for i, sp_ in enumerate(model.spaces):
        try:
            lap = deflate_laplacian(primal_laplacian(sp_.mesh, i), sp_.ll)
            lap.solve(np.zeros(sp_.mesh.n_vertices))
        except RuntimeError as exc:
            raise PreconditionerError(f"layer {i}: deflated primal Laplacian: {exc}") from exc
        laps.append(lap)
        if i < model.n_current_blocks:
            duals.append(deflate_laplacian(dual_laplacian(sp_.mesh, sp_.refined, i), sp_.dd))
            for name, g in (("dual/patch Gram", sp_.dp), ("pyramid Gram", sp_.ll)):
                try:
                    g.factor()
                except Exception as exc:  # noqa: BLE001
                    raise PreconditionerError(f"layer {i}: {name}: {exc}") from exc
        else:
            sp_.ll.factor()
    return PreconditionerParts(q, laps, duals, radii, zhat.index_map, model.spaces,
                               q_v, q_c, model.n_layers, model.n_current_blocks)


def _inner(parts: PreconditionerParts, zhat: BlockSystem, x):
    """``Q Zhat Q G P G^T Q Zhat Q x`` (the operator between the two M factors)."""
    q = parts.q
    t = q * (zhat.matrix @ (q * x))
    t = parts.apply_G(parts.apply_P(parts.apply_G(t, transpose=True)))
    return q * (zhat.matrix @ (q * t))


def apply_Zp(parts: PreconditionerParts, zhat: BlockSystem, x, *, mode: str = "pcg",
             m_dense: np.ndarray | None = None):
    """Apply the preconditioned operator.

    Parameters
    ----------
    mode : {"pcg", "full"}
        ``"pcg"`` applies ``A' = Q Zhat Q G P G^T Q Zhat Q`` (to be used with
        the ``M^2`` preconditioner); ``"full"`` applies ``M A' M`` and needs
        ``m_dense`` from :meth:`PreconditionerParts.dense_M`.
    """
    x = np.asarray(x, dtype=float)
    if mode == "pcg":
        return _inner(parts, zhat, x)
    if mode == "full":
        if m_dense is None:
            raise ValueError("full mode needs the dense M factor")
        return m_dense @ _inner(parts, zhat, m_dense @ x)
    raise ValueError(f"unknown mode {mode!r}")


def preconditioned_rhs(parts: PreconditionerParts, zhat: BlockSystem, b, *, mode: str = "pcg",
                       m_dense: np.ndarray | None = None):
    """Right-hand side ``[M] Q Zhat Q G P G^T Q b`` matching :func:`apply_Zp`."""
    b = np.asarray(b, dtype=float)
    q = parts.q
    t = parts.apply_G(parts.apply_P(parts.apply_G(q * b, transpose=True)))
    t = q * (zhat.matrix @ (q * t))
    if mode == "pcg":
        return t
    if mode == "full":
        if m_dense is None:
            raise ValueError("full mode needs the dense M factor")
        return m_dense @ t
    raise ValueError(f"unknown mode {mode!r}")


def recover_solution(parts: PreconditionerParts, u, *, m_dense: np.ndarray | None = None):
    """Unknowns of ``Zhat x = b`` from a preconditioned solution.

    ``u`` solves the PCG-mode system (then ``x = Q u``), or, with
    ``m_dense``, the full system (then ``x = Q M u``).
    """
    u = np.asarray(u, dtype=float)
    return parts.q * (u if m_dense is None else m_dense @ u)


def dense_operator(parts: PreconditionerParts, zhat: BlockSystem, symmetrize: bool = True) -> np.ndarray:
    """Dense ``A'`` built as ``C^T (P C)`` with ``C = G^T Q Zhat Q``.

    ``Z_p`` is congruent-similar to the pencil ``(A', G_mass)``; use
    :func:`zp_eigenvalues` for its spectrum. Without ``symmetrize`` the
    round-off asymmetry of the sparse solves inside ``P`` is kept.
    """
    q = parts.q
    c = q[:, None] * zhat.matrix
    c *= q[None, :]
    c = parts.apply_G(c, transpose=True)
    pc = parts.apply_P(c)
    a = c.T @ pc
    del c, pc
    if symmetrize:
        a += a.T
        a *= 0.5
    return a


def zp_eigenvalues(parts: PreconditionerParts, zhat: BlockSystem) -> np.ndarray:
    """Ascending eigenvalues of ``Z_p`` from the generalized pencil ``(A', G_mass)``."""
    a = dense_operator(parts, zhat)
    return sla.eigh(a, parts.dense_mass(), eigvals_only=True, overwrite_a=True, overwrite_b=True)


def scaling_coefficients(model: HeadModel, *, radius_consistent: bool = True) -> ScalingCoefficients:
    """Principal-part coefficients of every layer.

    With ``radius_consistent`` the coefficients account for the square-root
    radius factors folded into ``Q``, so the predictions hold for any radius;
    otherwise the radius enters ``beta``, ``eta``, ``epsilon`` and ``gamma``
    as if ``Q`` carried no radius factors. Both agree for unit radii.
    """
    q_v, q_c = scaling_constants(model)
    n = model.n_layers
    alpha = np.empty(n)
    beta = np.zeros(n)
    delta = np.full(n, np.nan)
    eta = np.zeros(n)
    eps = np.zeros(n)
    gamma = np.zeros(n)
    for i in range(n):
        s, s1 = model.sigma(i), model.sigma(i + 1)
        r = 1.0 if radius_consistent else model.radii[i]
        alpha[i] = q_v[i] ** 4 * (s + s1) ** 2
        if i < model.n_current_blocks:
            qq = q_v[i] * q_c[i]
            sinv = 1.0 / s + 1.0 / s1
            beta[i] = 4.0 * r**2 * qq**2
            delta[i] = q_c[i] ** 4 * sinv**2
            eta[i] = -2.0 * r * q_c[i] ** 2 * qq * sinv
            eps[i] = -2.0 / r * q_v[i] ** 2 * qq * (s + s1)
            gamma[i] = 4.0 / r**2 * qq**2
    return ScalingCoefficients(alpha, beta, delta, eta, eps, gamma)


def predicted_principal_eigenvalues(model: HeadModel, *, radius_consistent: bool = True):
    """Predicted accumulation points ``(lam1, lam2, lam3)`` per layer.

    For a layer with a current block, the 2x2 block principal part
    ``[[(alpha + beta/4)/4, eta/8], [eta/8, delta/4]]`` has the two Schur
    eigenvalues ``lam2 <= lam3``; the unmatched dimension carries
    ``lam1 = delta/4`` (more cells than vertices) or ``(4 alpha + beta)/16``.
    A layer without a current block (non-conducting exterior) has the single
    value ``alpha/4``, reported in all three slots.

    Returns
    -------
    coeffs : ScalingCoefficients
    triples : (n_layers, 3) array
    """
    c = scaling_coefficients(model, radius_consistent=radius_consistent)
    out = np.empty((model.n_layers, 3))
    for i in range(model.n_layers):
        if i >= model.n_current_blocks:
            out[i] = c.alpha[i] / 4.0
            continue
        out[i] = schur_eigenvalues(c.alpha[i], c.beta[i], c.delta[i], c.eta[i],
                                   model.meshes[i].n_vertices, model.meshes[i].n_cells)
    return c, out


def schur_eigenvalues(alpha, beta, delta, eta, n_v: int = 1, n_c: int = 2):
    """Closed-form triple for given coefficients (see :func:`predicted_principal_eigenvalues`)."""
    mean = 4 * alpha + beta + 4 * delta
    root = np.sqrt((4 * alpha + beta - 4 * delta) ** 2 + 16 * eta**2)
    lam1 = delta / 4 if n_c >= n_v else (4 * alpha + beta) / 16
    return lam1, (mean - root) / 32, (mean + root) / 32


COMPOSITES = ("SLS", "NLinvN", "DsLD")


def composite_spectrum(model: HeadModel, layer: int, kind: str) -> np.ndarray:
    """Ascending eigenvalues of one Calderon-type product on a single layer.

    Kinds and their symmetric, mass-normalized dense forms:

    * ``"SLS"``: ``A^-1/2 S G^-1 DualLap G^-T S A^-1/2`` with ``A`` the patch
      Gram (diagonal) and ``G`` the dual/patch Gram;
    * ``"NLinvN"``: ``L^-1/2 N Lap^-1 N L^-1/2`` with ``L`` the pyramid Gram;
    * ``"DsLD"``: ``L^-1/2 D^T G^-1 DualLap G^-T D L^-1/2``.

    Both Laplacians are the deflated ones.
    """
    if kind not in COMPOSITES:
        raise ValueError(f"unknown composite {kind!r}")
    sp_ = model.spaces[layer]
    ops = model.cache
    if kind == "NLinvN":
        lap = deflate_laplacian(primal_laplacian(sp_.mesh, layer), sp_.ll)
        n = ops.N(layer, layer)
        core = n @ lap.solve(n)
        w, v = np.linalg.eigh(sp_.ll.matrix.toarray())
    else:
        dual = deflate_laplacian(dual_laplacian(sp_.mesh, sp_.refined, layer), sp_.dd).toarray()
        gi = np.linalg.inv(sp_.dp.matrix.toarray())
        mid = gi @ dual @ gi.T
        if kind == "SLS":
            s = ops.S(layer, layer)
            core = s @ mid @ s
            w, v = sp_.pp.matrix.diagonal(), None
        else:
            d = ops.D(layer, layer)
            core = d.T @ mid @ d
            w, v = np.linalg.eigh(sp_.ll.matrix.toarray())
    if v is None:
        h = 1.0 / np.sqrt(w)
        a = h[:, None] * core * h[None, :]
    else:
        mh = (v / np.sqrt(w)) @ v.T
        a = mh @ core @ mh
    return np.linalg.eigvalsh(0.5 * (a + a.T))


def central_median(values) -> float:
    """Median of the central 50% of sorted values (drops the outer quartiles)."""
    e = np.sort(np.asarray(values, dtype=float))
    n = len(e)
    return float(np.median(e[n // 4: 3 * n // 4]))
