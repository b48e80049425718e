"""Acceptance suite: one test per criterion, each printing a single verdict line.

Shared heavy objects (three-layer heads at geodesic frequencies 3, 5 and 8,
the perturbed heads and the unit spheres) are built once per module.
"""

import time

import numpy as np
import pytest

from eegbem.analytic import SphereModelSpec
from eegbem.bem_operators import single_and_double_layer
from eegbem.harness import (ExperimentConfig, build_model, config_dipole, harmonic_rayleigh_quotients,
                            laplacian_oracle_deviation, outer_potential_error, run_cr_sweep,
                            solve_preconditioned, solve_unpreconditioned, system_rhs)
from eegbem.mesh import generate_icosphere, perturbed_sphere
from eegbem.precond import (build_preconditioner, central_median, composite_spectrum, dense_operator,
                            predicted_principal_eigenvalues, zp_eigenvalues)
from eegbem.solvers import spectrum
from eegbem.system import assemble_Z, assemble_Zhat, sphere_model

LEVELS = (3, 5, 8)
FINEST = LEVELS[-1]
CR_LIST = (10.0, 20.0, 40.0, 80.0, 100.0)


def _slope(h, values):
    return float(np.polyfit(np.log(1.0 / np.asarray(h)), np.log(values), 1)[0])


def _conditioning(model):
    zhat = assemble_Zhat(model)
    s = spectrum(zhat.matrix, symmetric=True, magnitudes=True)
    ev = zp_eigenvalues(build_preconditioner(model, zhat), zhat)
    return float(s[-1] / s[0]), float(ev[-1] / ev[0])


def _iteration_counts(config, model):
    zhat = assemble_Zhat(model)
    b = system_rhs(model, zhat, config_dipole(config), config)
    un = solve_unpreconditioned(zhat, b, config)
    pr = solve_preconditioned(build_preconditioner(model, zhat), zhat, b, config)
    return un, pr


@pytest.fixture(scope="module")
def config():
    return ExperimentConfig(levels=LEVELS, cr_level=FINEST)


@pytest.fixture(scope="module")
def heads(config):
    """Accuracy solves on the spherical head; also keeps the models for reuse."""
    spec = SphereModelSpec(config.radii, config.conductivities, lmax=config.lmax)
    dipole = config_dipole(config)
    out = {}
    t0 = time.perf_counter()
    for level in LEVELS:
        model = build_model(config, level)
        zhat = assemble_Zhat(model)
        b = system_rhs(model, zhat, dipole, config)
        un = solve_unpreconditioned(zhat, b, config, config.accuracy_tol)
        parts = build_preconditioner(model, zhat)
        pr = solve_preconditioned(parts, zhat, b, config, config.accuracy_tol)
        out[level] = dict(
            model=model, h=model.mean_mesh_width, zeta=zhat.zeta, index_map=zhat.index_map,
            un=un, pr=pr,
            err_un=outer_potential_error(model, zhat, un.x, spec, dipole),
            err_pr=outer_potential_error(model, zhat, pr.x, spec, dipole),
            diff=float(np.linalg.norm(un.x - pr.x) / np.linalg.norm(pr.x)),
        )
        del zhat, parts
    out["elapsed"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="module")
def conditioning(heads):
    return {level: _conditioning(heads[level]["model"]) for level in LEVELS}


@pytest.fixture(scope="module")
def cr_rows(config, heads):
    cfg = ExperimentConfig(levels=LEVELS, cr_level=FINEST, cr_list=CR_LIST)
    return {r.CR: r for r in run_cr_sweep(cfg, base=heads[FINEST]["model"])}


@pytest.fixture(scope="module")
def perturbed(config):
    cfg = ExperimentConfig(levels=LEVELS, epsilon=0.1)
    out = {}
    for level in LEVELS:
        model = build_model(cfg, level)
        out[level] = dict(h=model.mean_mesh_width, cond=_conditioning(model))
        if level == FINEST:
            out["counts"] = _iteration_counts(cfg, model)
    return out


@pytest.fixture(scope="module")
def unit_sphere3():
    return sphere_model((1.0,), (1.0,), 3)


@pytest.fixture(scope="module")
def schur_spheres():
    """Single-layer unit spheres with a conducting exterior at subdivisions 3 and 4."""
    out = {}
    for sub in (3, 4):
        model = sphere_model((1.0,), (1 / 3,), sub, sigma_outer=1 / 240)
        zhat = assemble_Zhat(model)
        ev = zp_eigenvalues(build_preconditioner(model, zhat), zhat)
        _, tri = predicted_principal_eigenvalues(model)
        pred = np.unique(tri[0])
        rel = np.min(np.abs(ev[:, None] - pred[None, :]) / pred[None, :], axis=1)
        self_d = model.cache.D(0, 0)
        out[sub] = dict(frac=float(np.mean(rel <= 0.25)), pred=pred, model=model, n=len(ev), d=self_d)
        del zhat, ev
    return out


def test_criterion_01_sphere_accuracy(heads, verdict):
    err_pr = [heads[f]["err_pr"] for f in LEVELS]
    err_un = [heads[f]["err_un"] for f in LEVELS]
    diffs = [heads[f]["diff"] for f in LEVELS]
    converged = all(heads[f]["un"].converged and heads[f]["pr"].converged for f in LEVELS)
    monotone = all(a > b for a, b in zip(err_pr, err_pr[1:])) and all(a > b for a, b in zip(err_un, err_un[1:]))
    agree = max(diffs) <= 1e-6
    fast = heads["elapsed"] < 600
    ok = converged and monotone and agree and fast
    verdict(1, ok, "errors " + ", ".join(f"{e:.3e}" for e in err_pr)
            + f"; max prec/unprec difference {max(diffs):.1e}; {heads['elapsed']:.0f} s")
    assert ok


def test_criterion_02_conditioning(heads, conditioning, verdict):
    h = [heads[f]["h"] for f in LEVELS]
    cz = [conditioning[f][0] for f in LEVELS]
    cp = [conditioning[f][1] for f in LEVELS]
    slope = _slope(h, cz)
    ratio = max(cp) / min(cp)
    ok = 1.5 <= slope <= 2.5 and ratio < 3
    verdict(2, ok, f"cond(Zhat) {', '.join(f'{c:.0f}' for c in cz)} slope {slope:.2f} (need 1.5..2.5); "
            f"cond(Z_p) {', '.join(f'{c:.3g}' for c in cp)} max/min {ratio:.2f} (need < 3)")
    assert ok


def test_criterion_03_iteration_counts(cr_rows, verdict):
    row = cr_rows[80.0]
    ok = row.converged_prec and row.converged_unprec and row.mvp_unprec >= 5 * row.mvp_prec
    verdict(3, ok, f"frequency {FINEST}: CGS {row.iters_unprec} it / {row.mvp_unprec} products, "
            f"PCG {row.iters_prec} it / {row.mvp_prec} products, ratio {row.mvp_unprec / row.mvp_prec:.2f} (need >= 5)")
    assert ok


def test_criterion_04_contrast_sweep(cr_rows, verdict):
    rows = [cr_rows[c] for c in CR_LIST]
    prec = [r.iters_prec for r in rows]
    unprec = [r.iters_unprec for r in rows]
    conv = all(r.converged_prec and r.converged_unprec for r in rows)
    stable = max(prec) < 2 * min(prec)
    grows = unprec[-1] > unprec[0]
    ok = conv and stable and grows
    verdict(4, ok, f"PCG iterations {prec} (max/min {max(prec) / min(prec):.2f}); "
            f"CGS iterations {unprec} (CR=100 {'>' if grows else '<='} CR=10)")
    assert ok


def test_criterion_05_spectral_oracles(unit_sphere3, verdict):
    worst_s = worst_n = 0.0
    for l, _, rs, rn in harmonic_rayleigh_quotients(unit_sphere3, 0, 5):
        worst_s = max(worst_s, abs(rs * (2 * l + 1) - 1))
        if l > 0:
            worst_n = max(worst_n, abs(rn / (-l * (l + 1) / (2 * l + 1)) - 1))
    ok = worst_s <= 0.05 and worst_n <= 0.05
    verdict(5, ok, f"max relative deviation for l <= 5: S {worst_s:.2e}, N {worst_n:.2e} (need <= 5e-2)")
    assert ok


def test_criterion_06_accumulation_points(unit_sphere3, verdict):
    targets = {"SLS": 0.25, "NLinvN": 0.25, "DsLD": 1 / 16}
    got = {k: central_median(composite_spectrum(unit_sphere3, 0, k)) for k in targets}
    dev = {k: abs(got[k] / targets[k] - 1) for k in targets}
    ok = max(dev.values()) <= 0.10
    verdict(6, ok, "; ".join(f"{k} {got[k]:.4f} ({100 * dev[k]:.1f}% off)" for k in targets) + " (need <= 10%)")
    assert ok


def test_criterion_07_schur_clusters(schur_spheres, verdict):
    f3, f4 = schur_spheres[3]["frac"], schur_spheres[4]["frac"]
    ok = f3 >= 0.6 and f4 >= f3
    pred = ", ".join(f"{p:.4f}" for p in schur_spheres[3]["pred"])
    verdict(7, ok, f"predicted ({pred}); within 25%: {f3:.4f} at subdivision 3, {f4:.4f} at subdivision 4")
    assert ok


def test_criterion_08_spd_and_deflation(heads, verdict):
    model = heads[5]["model"]
    z = assemble_Z(model)
    zhat = assemble_Zhat(model, z)
    n = zhat.size
    rank_z = np.linalg.matrix_rank(z.matrix)
    rank_zh = np.linalg.matrix_rank(zhat.matrix)
    parts = build_preconditioner(model, zhat)
    m = parts.dense_M()
    zp = m @ dense_operator(parts, zhat, symmetrize=False) @ m
    asym = float(np.linalg.norm(zp - zp.T) / np.linalg.norm(zp))
    lam_min = float(np.linalg.eigvalsh(0.5 * (zp + zp.T))[0])
    mean_free = []
    for f in LEVELS:
        last = heads[f]["model"].n_layers - 1
        sl = heads[f]["index_map"][(last, "V")]
        zeta = heads[f]["zeta"][sl]
        for out in (heads[f]["un"], heads[f]["pr"]):
            v = out.x[sl]
            mean_free.append(abs(zeta @ v) / (np.linalg.norm(zeta) * np.linalg.norm(v)))
    ok = asym <= 1e-10 and lam_min > 0 and rank_zh == n and rank_z == n - 1 and max(mean_free) <= 1e-8
    verdict(8, ok, f"Z_p asymmetry {asym:.1e}, min eigenvalue {lam_min:.2e}; rank Zhat {rank_zh}/{n}, "
            f"rank Z {rank_z}/{n}; mean of outer potential {max(mean_free):.1e}")
    assert ok


def test_criterion_09_laplacian_oracles(heads, verdict):
    meshes = [generate_icosphere(1.0, 3), perturbed_sphere(1.0, 3, 0.1)] + list(heads[FINEST]["model"].meshes)
    devs = np.array([laplacian_oracle_deviation(m) for m in meshes])
    worst_dual, worst_primal = devs.max(axis=0)
    ok = worst_dual <= 1e-12 and worst_primal <= 1e-12
    verdict(9, ok, f"max entrywise deviation over {len(meshes)} meshes: dual {worst_dual:.1e}, "
            f"primal {worst_primal:.1e} (need <= 1e-12)")
    assert ok


def test_criterion_10_nullspace_identities(heads, schur_spheres, unit_sphere3, verdict):
    n_worst = 0.0
    for f in LEVELS:
        model = heads[f]["model"]
        for i in range(model.n_layers):
            nn = model.cache.N(i, i)
            n_worst = max(n_worst, np.linalg.norm(nn @ np.ones(len(nn))) / np.linalg.norm(nn))
    defects = {}
    mesh2 = generate_icosphere(1.0, 2)
    _, d2 = single_and_double_layer(mesh2, mesh2)
    for sub, mesh, d in ((2, mesh2, d2), (3, unit_sphere3.meshes[0], unit_sphere3.cache.D(0, 0)),
                         (4, schur_spheres[4]["model"].meshes[0], schur_spheres[4]["d"])):
        half = 0.5 * mesh.areas
        defects[sub] = float(np.max(np.abs(d @ np.ones(mesh.n_vertices) + half) / half))
    improving = defects[2] >= defects[3] >= defects[4]
    ok = n_worst <= 1e-6 and defects[3] <= 0.02 and improving
    verdict(10, ok, f"N*1 {n_worst:.1e}; D_ii*1 entrywise defect "
            + ", ".join(f"{defects[k]:.2e}" for k in (2, 3, 4)) + " at subdivisions 2, 3, 4"
            + ("" if improving else " (not decreasing)"))
    assert ok


def test_criterion_11_perturbed_surfaces(perturbed, verdict):
    h = [perturbed[f]["h"] for f in LEVELS]
    cz = [perturbed[f]["cond"][0] for f in LEVELS]
    cp = [perturbed[f]["cond"][1] for f in LEVELS]
    slope = _slope(h, cz)
    ratio = max(cp) / min(cp)
    un, pr = perturbed["counts"]
    mvp_ratio = un.mvp / pr.mvp
    ok = 1.5 <= slope <= 2.5 and ratio < 3 and un.converged and pr.converged and mvp_ratio >= 5
    verdict(11, ok, f"epsilon 0.1: cond(Zhat) slope {slope:.2f}, cond(Z_p) max/min {ratio:.2f}, "
            f"products CGS {un.mvp} / PCG {pr.mvp} = {mvp_ratio:.2f}")
    assert ok
