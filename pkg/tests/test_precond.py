import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eegbem.precond import (COMPOSITES, apply_Zp, build_preconditioner, central_median,
                            composite_spectrum, dense_operator, predicted_principal_eigenvalues,
                            preconditioned_rhs, recover_solution, scaling_coefficients,
                            scaling_constants, schur_eigenvalues, zp_eigenvalues)
from eegbem.solvers import pcg
from eegbem.system import assemble_rhs, assemble_Z, assemble_Zhat, sphere_model


@pytest.fixture(scope="module")
def head_parts(head_f3):
    zh = assemble_Zhat(head_f3)
    return zh, build_preconditioner(head_f3, zh)


def test_needs_deflated_matrix(head_f3):
    with pytest.raises(ValueError):
        build_preconditioner(head_f3, assemble_Z(head_f3))


def test_scaling_constants(head_f3):
    q_v, q_c = scaling_constants(head_f3)
    s = (1 / 3, 1 / 240, 1 / 3, 0.0)
    assert np.allclose(q_v, [max(s[i], s[i + 1]) ** -0.5 for i in range(3)])
    assert np.allclose(q_c[:2], [min(s[i], s[i + 1]) ** 0.5 for i in range(2)])


def test_dense_and_matrix_free_agree(head_parts):
    zh, parts = head_parts
    a = dense_operator(parts, zh)
    x = np.random.default_rng(0).standard_normal(zh.size)
    y = apply_Zp(parts, zh, x)
    assert np.abs(a @ x - y).max() <= 1e-12 * np.abs(y).max()


def test_full_mode_is_similar(head_parts):
    zh, parts = head_parts
    m = parts.dense_M()
    x = np.random.default_rng(1).standard_normal(zh.size)
    full = apply_Zp(parts, zh, x, mode="full", m_dense=m)
    assert np.allclose(full, m @ apply_Zp(parts, zh, m @ x))
    assert np.allclose(m @ m @ x, parts.apply_Minv2(x))
    with pytest.raises(ValueError):
        apply_Zp(parts, zh, x, mode="full")
    with pytest.raises(ValueError):
        apply_Zp(parts, zh, x, mode="half")


def test_zp_is_spd(head_parts):
    zh, parts = head_parts
    ev = zp_eigenvalues(parts, zh)
    assert ev[0] > 0


def test_pcg_solution_solves_original_system(head_f3, head_parts, radial_dipole):
    zh, parts = head_parts
    b = assemble_rhs(head_f3, radial_dipole)
    u, rep = pcg(lambda v: apply_Zp(parts, zh, v), parts.apply_Minv2,
                 preconditioned_rhs(parts, zh, b), tol=1e-12, maxit=2000)
    assert rep.converged
    x = recover_solution(parts, u)
    assert np.linalg.norm(zh.matrix @ x - b) <= 1e-8 * np.linalg.norm(b)


def test_spectrum_unit_independent_outside_deflated_modes():
    for sigma_outer, moved in ((0.1, 4), (0.0, 1)):
        ev = []
        for r in (1.0, 0.1):
            m = sphere_model((r,), (0.3,), 1, sigma_outer=sigma_outer)
            zh = assemble_Zhat(m)
            ev.append(zp_eigenvalues(build_preconditioner(m, zh), zh))
        d = np.min(np.abs(ev[0][:, None] - ev[1][None, :]), axis=1) / ev[0]
        assert np.sum(d > 1e-8) <= moved


def test_one_layer_prediction_values():
    m = sphere_model((1.0,), (1.0,), 1, sigma_outer=1.0)
    _, tri = predicted_principal_eigenvalues(m)
    assert np.allclose(np.sort(tri[0]), [(36 - np.sqrt(272)) / 32, 1.0, (36 + np.sqrt(272)) / 32])


def test_eliminated_last_layer_prediction(head_f3):
    c, tri = predicted_principal_eigenvalues(head_f3)
    assert np.allclose(tri[2], c.alpha[2] / 4) and np.isclose(c.alpha[2] / 4, 0.25)


def test_radius_conventions_agree_at_unit_radius():
    m = sphere_model((1.0,), (0.5,), 1, sigma_outer=0.2)
    a = scaling_coefficients(m, radius_consistent=True)
    b = scaling_coefficients(m, radius_consistent=False)
    assert np.allclose(a.beta, b.beta) and np.allclose(a.eta, b.eta)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.01, 10), st.floats(-3, 3))
def test_schur_pair_matches_block_eigenvalues(alpha, beta, delta, eta):
    _, l2, l3 = schur_eigenvalues(alpha, beta, delta, eta)
    block = np.array([[(alpha + beta / 4) / 4, eta / 8], [eta / 8, delta / 4]])
    assert np.allclose([l2, l3], np.linalg.eigvalsh(block), rtol=1e-10, atol=1e-12)


def test_composites(sphere1):
    m = sphere_model((1.0,), (1.0,), 1, sigma_outer=1.0)
    for kind in COMPOSITES:
        ev = composite_spectrum(m, 0, kind)
        assert ev[-1] > 0
    with pytest.raises(ValueError):
        composite_spectrum(m, 0, "SS")
    assert central_median([0, 1, 2, 3, 4, 5, 6, 100]) == 3.5
