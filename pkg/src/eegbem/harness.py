"""Command-line experiments on nested spheres, written as CSV files.

Subcommands: ``accuracy``, ``conditioning``, ``cr-sweep``, ``spectrum``,
``oracle-check`` and ``gnuplot``. Each reads a plain ``key = value`` config
file and writes ``<subcommand>.csv`` into the output directory.

Operator applications are counted in products with ``Zhat``: one per CGS
half-step and two per application of the preconditioned operator, plus the
true-residual checks and the single product needed to form the preconditioned
right-hand side.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .analytic import SphereModelSpec, real_spherical_harmonics, sphere_forward_potential
from .laplacian import dual_laplacian, primal_laplacian
from .mesh import TriangleMesh, barycentric_refine
from .precond import (apply_Zp, build_preconditioner, preconditioned_rhs, recover_solution,
                      zp_eigenvalues)
from .solvers import SolveReport, cg, cgs, pcg, spectrum
from .system import (Dipole, HeadModel, assemble_rhs, assemble_Z, assemble_Zhat, compatible_rhs,
                     sphere_model, system_size)

log = logging.getLogger(__name__)

COLUMNS = {
    "accuracy": ("h", "rel_error_unprec", "rel_error_prec"),
    "conditioning": ("h", "cond_Zhat", "cond_Zp"),
    "cr-sweep": ("CR", "iters_unprec", "iters_prec", "mvp_unprec", "mvp_prec"),
    "spectrum": ("level", "h", "index", "eig_Zhat", "eig_Zp"),
    "oracle-check": ("check", "level", "value", "tolerance", "passed"),
}


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


class DenseSizeError(RuntimeError):
    """A dense computation was refused because the system exceeds the cap."""


@dataclass
class ExperimentConfig:
    """Run parameters.

    Lengths are in metres and conductivities in S/m. ``levels`` are geodesic
    frequencies (``level_kind = frequency``) or icosphere subdivision counts
    (``level_kind = subdivision``). ``solver`` selects how the preconditioned
    system is solved: ``pcg`` runs PCG with the ``M^2`` preconditioner, while
    ``cg`` and ``cgs`` run on the fully preconditioned matrix, which needs the
    dense ``M`` factor. The unpreconditioned system is always solved with CGS.
    ``tol`` governs iteration counts; the accuracy sweep solves to the tighter
    ``accuracy_tol`` so that both solutions can be compared with each other.
    """

    radii: tuple = (0.087, 0.092, 0.1)
    conductivities: tuple = (1 / 3, 1 / 240, 1 / 3)
    sigma_outer: float = 0.0
    levels: tuple = (3, 5, 8)
    level_kind: str = "frequency"
    epsilon: float = 0.0
    dipole_position: tuple = (0.0, 0.0, 0.045)
    dipole_moment: tuple = (0.0, 0.0, 1.0)
    solver: str = "pcg"
    tol: float = 1e-8
    accuracy_tol: float = 1e-11
    maxit: int = 0
    cgs_shadow: str = "random"
    seed: int = 0
    cr_list: tuple = (1.0, 10.0, 20.0, 40.0, 80.0, 100.0)
    cr_level: int = 8
    lmax: int = 100
    order: int = 3
    max_dense: int = 8000
    output_dir: str = "results"

    _tuple_keys = ("radii", "conductivities", "levels", "dipole_position", "dipole_moment", "cr_list")

    def __post_init__(self):
        self.radii = tuple(float(x) for x in self.radii)
        self.conductivities = tuple(float(x) for x in self.conductivities)
        self.levels = tuple(int(x) for x in self.levels)
        self.cr_list = tuple(float(x) for x in self.cr_list)
        self.dipole_position = tuple(float(x) for x in self.dipole_position)
        self.dipole_moment = tuple(float(x) for x in self.dipole_moment)
        if len(self.radii) != len(self.conductivities) or not self.radii:
            raise ConfigError("radii and conductivities need the same non-zero length")
        if len(self.dipole_position) != 3 or len(self.dipole_moment) != 3:
            raise ConfigError("dipole position and moment need three components")
        if self.level_kind not in ("frequency", "subdivision"):
            raise ConfigError("level_kind must be 'frequency' or 'subdivision'")
        if self.solver not in ("cg", "pcg", "cgs"):
            raise ConfigError("solver must be one of cg, pcg, cgs")
        if self.cgs_shadow not in ("random", "residual"):
            raise ConfigError("cgs_shadow must be 'random' or 'residual'")
        if not self.levels:
            raise ConfigError("at least one refinement level is required")
        if self.tol <= 0 or self.accuracy_tol <= 0:
            raise ConfigError("tolerances must be positive")

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma separated."""
        known = {f.name: f for f in fields(cls) if not f.name.startswith("_")}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = cls._convert(key, value, lineno)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def _convert(cls, key, value, lineno):
        try:
            if key in cls._tuple_keys:
                return tuple(_number(v) for v in value.split(",") if v.strip())
            default = cls.__dataclass_fields__[key].default
            if isinstance(default, bool):
                return value.lower() in ("1", "true", "yes")
            if isinstance(default, int):
                return int(value)
            if isinstance(default, float):
                return _number(value)
            return value
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc


def _number(text: str) -> float:
    """Float, also accepting a simple ratio such as ``1/240``."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def build_model(config: ExperimentConfig, level: int, conductivities=None) -> HeadModel:
    kw = {"frequency": level} if config.level_kind == "frequency" else {"subdivisions": level}
    return sphere_model(config.radii, conductivities or config.conductivities, epsilon=config.epsilon,
                        sigma_outer=config.sigma_outer, order=config.order, **kw)


def config_dipole(config: ExperimentConfig) -> Dipole:
    return Dipole(np.array(config.dipole_position), np.array(config.dipole_moment))


@dataclass
class SolveOutcome:
    x: np.ndarray
    report: SolveReport
    mvp: int
    converged: bool


def system_rhs(model: HeadModel, zhat, dipole: Dipole, config: ExperimentConfig) -> np.ndarray:
    """Dipole right-hand side made compatible with the discrete kernel of ``Z``."""
    return compatible_rhs(model, zhat, assemble_rhs(model, dipole, order=config.order))


def solve_unpreconditioned(zhat, b, config: ExperimentConfig, tol: float | None = None) -> SolveOutcome:
    """CGS on ``Zhat x = b``."""
    maxit = config.maxit or 2 * len(b)
    tol = config.tol if tol is None else tol
    x, rep = cgs(zhat.matrix, b, tol=tol, maxit=maxit, shadow=config.cgs_shadow, seed=config.seed)
    return SolveOutcome(x, rep, rep.total_mvp, rep.converged)


def solve_preconditioned(parts, zhat, b, config: ExperimentConfig, tol: float | None = None) -> SolveOutcome:
    """Solve through the preconditioned operator and map back to ``Zhat`` unknowns.

    The tolerance applies to the relative residual of the preconditioned
    system that is actually iterated on.
    """
    maxit = config.maxit or 2 * len(b)
    tol = config.tol if tol is None else tol
    if config.solver == "pcg":
        rhs = preconditioned_rhs(parts, zhat, b)
        u, rep = pcg(lambda v: apply_Zp(parts, zhat, v), parts.apply_Minv2, rhs,
                     tol=tol, maxit=maxit)
        x = recover_solution(parts, u)
    else:
        if len(b) > config.max_dense:
            raise DenseSizeError(f"dense M factor for {len(b)} unknowns exceeds max_dense={config.max_dense}")
        m = parts.dense_M()
        rhs = preconditioned_rhs(parts, zhat, b, mode="full", m_dense=m)
        op = lambda v: apply_Zp(parts, zhat, v, mode="full", m_dense=m)  # noqa: E731
        if config.solver == "cg":
            u, rep = cg(op, rhs, tol=tol, maxit=maxit)
        else:
            u, rep = cgs(op, rhs, tol=tol, maxit=maxit, shadow=config.cgs_shadow, seed=config.seed)
        x = recover_solution(parts, u, m_dense=m)
    return SolveOutcome(x, rep, 2 * rep.total_mvp + 1, rep.converged)


def outer_potential_error(model: HeadModel, zhat, x, spec: SphereModelSpec, dipole: Dipole) -> float:
    """Relative L2 error of the outermost potential against the series.

    Both fields are made mean-free (area-weighted) before comparison; the norm
    uses the pyramid Gram matrix of the outermost surface.
    """
    last = model.n_layers - 1
    mesh = model.meshes[last]
    g = model.spaces[last].ll.matrix
    ones = np.ones(mesh.n_vertices)
    w = g @ ones
    num = x[zhat.index_map[(last, "V")]]
    ref = sphere_forward_potential(spec, dipole, mesh.vertices)
    num = num - (w @ num) / w.sum()
    ref = ref - (w @ ref) / w.sum()
    e = num - ref
    return float(np.sqrt((e @ (g @ e)) / (ref @ (g @ ref))))


@dataclass
class AccuracyRow:
    level: int
    h: float
    rel_error_unprec: float
    rel_error_prec: float
    converged_unprec: bool
    converged_prec: bool
    relative_difference: float
    iters_unprec: int = 0
    iters_prec: int = 0


def run_accuracy_sweep(config: ExperimentConfig) -> list:
    """Outer-layer error of the unpreconditioned and preconditioned solutions per level."""
    if config.epsilon != 0:
        raise ConfigError("the accuracy sweep needs spherical surfaces (epsilon = 0)")
    spec = SphereModelSpec(config.radii, config.conductivities, lmax=config.lmax)
    dipole = config_dipole(config)
    rows = []
    for level in config.levels:
        model = build_model(config, level)
        zhat = assemble_Zhat(model)
        b = system_rhs(model, zhat, dipole, config)
        un = solve_unpreconditioned(zhat, b, config, config.accuracy_tol)
        parts = build_preconditioner(model, zhat)
        pr = solve_preconditioned(parts, zhat, b, config, config.accuracy_tol)
        for name, out in (("unpreconditioned", un), ("preconditioned", pr)):
            if not out.converged:
                log.warning("level %s: %s solve did not converge (%d iterations)",
                            level, name, out.report.iterations)
        diff = float(np.linalg.norm(un.x - pr.x) / np.linalg.norm(pr.x))
        rows.append(AccuracyRow(level, model.mean_mesh_width,
                                outer_potential_error(model, zhat, un.x, spec, dipole),
                                outer_potential_error(model, zhat, pr.x, spec, dipole),
                                un.converged, pr.converged, diff,
                                un.report.iterations, pr.report.iterations))
    return rows


@dataclass
class ConditioningRow:
    level: int
    h: float
    cond_Zhat: float
    cond_Zp: float
    n: int


def _guard(n: int, config: ExperimentConfig):
    if n > config.max_dense:
        raise DenseSizeError(f"{n} unknowns exceed max_dense={config.max_dense}")


def run_conditioning_sweep(config: ExperimentConfig) -> list:
    """Dense 2-norm condition numbers of ``Zhat`` and ``Z_p`` per level."""
    rows = []
    for level in config.levels:
        model = build_model(config, level)
        _guard(system_size(model), config)
        zhat = assemble_Zhat(model)
        s = spectrum(zhat.matrix, symmetric=True, magnitudes=True)
        parts = build_preconditioner(model, zhat)
        ev = zp_eigenvalues(parts, zhat)
        rows.append(ConditioningRow(level, model.mean_mesh_width, float(s[-1] / s[0]),
                                    float(ev[-1] / ev[0]) if ev[0] > 0 else math.inf, zhat.size))
    return rows


@dataclass
class CRRow:
    CR: float
    iters_unprec: int
    iters_prec: int
    mvp_unprec: int
    mvp_prec: int
    converged_unprec: bool
    converged_prec: bool


def contrast_conductivities(config: ExperimentConfig, ratio: float):
    """Scale every compartment except the first and last by ``1 / ratio``."""
    s = list(config.conductivities)
    base = s[0]
    return tuple(base if k in (0, len(s) - 1) else base / ratio for k in range(len(s)))


def run_cr_sweep(config: ExperimentConfig, base: HeadModel | None = None) -> list:
    """Iteration and operator-application counts over conductivity ratios at a fixed mesh.

    ``base`` may supply an already assembled model of the ``cr_level`` mesh;
    only its geometry and operator blocks are used.
    """
    dipole = config_dipole(config)
    base = build_model(config, config.cr_level) if base is None else base
    rows = []
    for ratio in config.cr_list:
        model = base.with_conductivities(contrast_conductivities(config, ratio))
        z = assemble_Z(model)
        zhat = assemble_Zhat(model, z)
        b = system_rhs(model, zhat, dipole, config)
        un = solve_unpreconditioned(zhat, b, config)
        parts = build_preconditioner(model, zhat)
        pr = solve_preconditioned(parts, zhat, b, config)
        for name, out in (("unpreconditioned", un), ("preconditioned", pr)):
            if not out.converged:
                log.warning("CR=%g: %s solve did not converge (%d iterations)",
                            ratio, name, out.report.iterations)
        rows.append(CRRow(ratio, un.report.iterations, pr.report.iterations, un.mvp, pr.mvp,
                          un.converged, pr.converged))
    return rows


@dataclass
class SpectrumRow:
    level: int
    h: float
    index: int
    eig_Zhat: float
    eig_Zp: float


def run_spectrum(config: ExperimentConfig) -> list:
    """Full ascending spectra of ``Zhat`` and ``Z_p`` per level."""
    rows = []
    for level in config.levels:
        model = build_model(config, level)
        _guard(system_size(model), config)
        zhat = assemble_Zhat(model)
        ez = spectrum(zhat.matrix, symmetric=True)
        ep = zp_eigenvalues(build_preconditioner(model, zhat), zhat)
        h = model.mean_mesh_width
        rows.extend(SpectrumRow(level, h, k, float(a), float(c)) for k, (a, c) in enumerate(zip(ez, ep)))
    return rows


def gradient_stiffness(mesh: TriangleMesh) -> np.ndarray:
    """Dense P1 stiffness matrix from per-cell gradients of the hat functions.

    An independent route to the cotangent formula: ``grad lambda_k`` is
    ``n x e_k / (2 A)`` with ``e_k`` the edge opposite vertex ``k``.
    """
    t = mesh.triangles
    n = mesh.normals
    out = np.zeros((mesh.n_vertices, mesh.n_vertices))
    grads = [np.cross(n, t[:, (k + 2) % 3] - t[:, (k + 1) % 3]) / (2 * mesh.areas[:, None])
             for k in range(3)]
    for a in range(3):
        for b in range(3):
            vals = mesh.areas * np.einsum("td,td->t", grads[a], grads[b])
            np.add.at(out, (mesh.cells[:, a], mesh.cells[:, b]), vals)
    return out


def harmonic_rayleigh_quotients(model: HeadModel, layer: int, lmax: int = 5) -> list:
    """Rayleigh quotients of S (patch) and N (pyramid) on sampled real harmonics.

    Returns a list of ``(l, m, rq_S, rq_N)`` for ``0 <= l <= lmax``.
    """
    mesh = model.meshes[layer]
    sp_ = model.spaces[layer]
    s = model.cache.S(layer, layer)
    nn = model.cache.N(layer, layer)
    yc = real_spherical_harmonics(lmax, mesh.centroids)
    yv = real_spherical_harmonics(lmax, mesh.vertices)
    gp = sp_.pp.matrix
    gl = sp_.ll.matrix
    out = []
    for l in range(lmax + 1):
        for m in range(-l, l + 1):
            a, c = yc[(l, m)], yv[(l, m)]
            out.append((l, m, float(a @ s @ a / (a @ (gp @ a))), float(c @ nn @ c / (c @ (gl @ c)))))
    return out


def laplacian_oracle_deviation(mesh: TriangleMesh):
    """Largest entrywise deviations (relative to the largest entry) of the two Laplacians.

    The dual Laplacian is compared with the congruence of the refined-mesh
    stiffness matrix, the primal one with :func:`gradient_stiffness`.
    """
    ref = barycentric_refine(mesh)
    dual = dual_laplacian(mesh, ref).matrix.toarray()
    cong = (ref.dual_map.T @ primal_laplacian(ref.mesh).matrix @ ref.dual_map).toarray()
    prim = primal_laplacian(mesh).matrix.toarray()
    grad = gradient_stiffness(mesh)
    return (float(np.abs(dual - cong).max() / np.abs(cong).max()),
            float(np.abs(prim - grad).max() / np.abs(grad).max()))


@dataclass
class OracleRow:
    check: str
    level: int
    value: float
    tolerance: float
    passed: bool


def oracle_rows(model: HeadModel, level: int, sphere: bool) -> list:
    rows = []

    def add(name, value, tol):
        rows.append(OracleRow(name, level, float(value), tol, bool(value <= tol)))

    for i, mesh in enumerate(model.meshes):
        dual_dev, primal_dev = laplacian_oracle_deviation(mesh)
        add(f"dual_laplacian_congruence[{i}]", dual_dev, 1e-12)
        add(f"primal_laplacian_gradient[{i}]", primal_dev, 1e-12)
        nmat = model.cache.N(i, i)
        ones = np.ones(mesh.n_vertices)
        add(f"N_ones[{i}]", np.linalg.norm(nmat @ ones) / np.linalg.norm(nmat), 1e-6)
        d1 = model.cache.D(i, i) @ ones
        half = 0.5 * mesh.areas
        add(f"D_ones_entrywise[{i}]", np.max(np.abs(d1 + half) / half), 0.02)
        if sphere:
            r = model.radii[i]
            worst_s = worst_n = 0.0
            for l, _, rs, rn in harmonic_rayleigh_quotients(model, i, 5):
                worst_s = max(worst_s, abs(rs / (r / (2 * l + 1)) - 1))
                if l > 0:
                    worst_n = max(worst_n, abs(rn / (-l * (l + 1) / (r * (2 * l + 1))) - 1))
            add(f"S_rayleigh_l5[{i}]", worst_s, 0.05)
            add(f"N_rayleigh_l5[{i}]", worst_n, 0.05)
    return rows


def run_oracle_check(config: ExperimentConfig) -> list:
    """Laplacian, nullspace and spherical-harmonic oracle checks per level."""
    rows = []
    for level in config.levels:
        model = build_model(config, level)
        rows.extend(oracle_rows(model, level, sphere=config.epsilon == 0))
    return rows


def _cell(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns, rows, blank_unconverged: bool = False) -> Path:
    """Write rows (dataclasses) with the given header.

    With ``blank_unconverged``, error and count cells of a solve that did not
    converge are written as ``nan``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            vals = []
            for c in columns:
                v = getattr(r, c)
                if blank_unconverged:
                    flag = "converged_unprec" if c.endswith("_unprec") else (
                        "converged_prec" if c.endswith("_prec") else None)
                    if flag and not getattr(r, flag):
                        v = float("nan")
                vals.append(_cell(v))
            w.writerow(vals)
    return path


GNUPLOT = {
    "accuracy": ("set logscale xy\nset xlabel '1/h (1/m)'\nset ylabel 'relative error'\n"
                 "plot '{csv}' using (1/$1):2 with linespoints title 'unpreconditioned', "
                 "'' using (1/$1):3 with linespoints title 'preconditioned'\n"),
    "conditioning": ("set logscale xy\nset xlabel '1/h (1/m)'\nset ylabel 'condition number'\n"
                     "plot '{csv}' using (1/$1):2 with linespoints title 'Zhat', "
                     "'' using (1/$1):3 with linespoints title 'Z_p'\n"),
    "cr-sweep": ("set xlabel 'conductivity ratio'\nset ylabel 'iterations'\n"
                 "plot '{csv}' using 1:2 with linespoints title 'unpreconditioned', "
                 "'' using 1:3 with linespoints title 'preconditioned'\n"),
    "spectrum": ("set xlabel 'index'\nset ylabel 'eigenvalue'\n"
                 "plot '{csv}' using 3:5 with points title 'Z_p'\n"),
}


def write_gnuplot(out_dir) -> list:
    """Write ``<name>.gp`` next to every known CSV present in ``out_dir``."""
    out_dir = Path(out_dir)
    written = []
    for name, body in GNUPLOT.items():
        csv_path = out_dir / f"{name}.csv"
        if csv_path.exists():
            gp = out_dir / f"{name}.gp"
            head = "set datafile separator ','\nset key autotitle columnhead\n"
            gp.write_text(head + body.format(csv=csv_path.name))
            written.append(gp)
    return written


RUNNERS = {
    "accuracy": run_accuracy_sweep,
    "conditioning": run_conditioning_sweep,
    "cr-sweep": run_cr_sweep,
    "spectrum": run_spectrum,
    "oracle-check": run_oracle_check,
}


HELP = {
    "accuracy": "outer-layer error against the series solution per level",
    "conditioning": "condition numbers of Zhat and Z_p per level",
    "cr-sweep": "iteration and operator-application counts over conductivity ratios",
    "spectrum": "full spectra of Zhat and Z_p per level",
    "oracle-check": "Laplacian, null-space and harmonic Rayleigh-quotient checks",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eegbem", description="Nested-sphere BEM experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        sp_ = sub.add_parser(name, help=HELP[name])
        sp_.add_argument("--config", type=Path, help="key = value file (defaults are used if omitted)")
        sp_.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        sp_.add_argument("--max-dense", type=int, help="largest system for dense eigen/SVD work")
    g = sub.add_parser("gnuplot", help="write gnuplot scripts for CSV files in a directory")
    g.add_argument("--out", type=Path, required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gnuplot":
        for path in write_gnuplot(args.out):
            print(path)
        return 0
    try:
        config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
        if args.max_dense is not None:
            config.max_dense = args.max_dense
        rows = RUNNERS[args.command](config)
    except (DenseSizeError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out if args.out is not None else Path(config.output_dir)
    blank = args.command in ("accuracy", "cr-sweep")
    path = write_csv(out_dir / f"{args.command}.csv", COLUMNS[args.command], rows, blank)
    print(path)
    return 0
