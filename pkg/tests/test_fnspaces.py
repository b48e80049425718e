import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eegbem.fnspaces import KINDS, LayerSpaces, gram, gram_inverse_apply
from eegbem.mesh import barycentric_refine, perturbed_sphere


@pytest.fixture(scope="module")
def spaces(sphere2):
    return LayerSpaces.build(sphere2)


def test_total_integrals(spaces, sphere2):
    a = sphere2.total_area
    for kind in KINDS:
        m = getattr(spaces, kind).matrix
        assert np.isclose(m.sum(), a, rtol=1e-12), kind


def test_row_integrals(spaces, sphere2):
    # integral of each pyramid is a third of its patch area
    ll = spaces.ll.matrix
    star = np.bincount(sphere2.cells.ravel(), weights=np.repeat(sphere2.areas, 3)) / 3
    assert np.allclose(np.asarray(ll.sum(axis=1)).ravel(), star)
    # dual pyramids and patches both sum to one, so both row sums give the dual pyramid integral
    dp = spaces.dp.matrix
    assert np.allclose(np.asarray(dp.sum(axis=1)).ravel(), np.asarray(spaces.dd.matrix.sum(axis=1)).ravel())


def test_symmetric_kinds(spaces):
    for kind in ("pp", "ll", "dd"):
        m = getattr(spaces, kind).matrix
        assert abs(m - m.T).max() < 1e-15


def test_dual_patch_gram_is_invertible(spaces):
    x = np.random.default_rng(1).standard_normal(spaces.dp.shape[0])
    y = gram_inverse_apply(spaces.dp, x)
    assert np.allclose(spaces.dp.matrix @ y, x)
    assert np.allclose(spaces.dp.matrix.T @ spaces.dp.solve(x, trans=True), x)


def test_gram_needs_refinement(sphere1):
    with pytest.raises(ValueError):
        gram(sphere1, None, "dp")
    with pytest.raises(ValueError):
        gram(sphere1, None, "xx")
    other = barycentric_refine(perturbed_sphere(1.0, 1, 0.0))
    with pytest.raises(ValueError):
        gram(sphere1, other, "dd")


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_mass_of_linear_field_is_exact(c):
    # P1 interpolation of an affine field is exact, so its Gram quadratic form is its L2 norm
    m = perturbed_sphere(1.0, 1, 0.05)
    sp_ = LayerSpaces.build(m)
    f = lambda x: c[0] + x @ np.array(c[1:])  # noqa: E731
    v = f(m.vertices)
    exact = 0.0
    rule_b = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    for t, a in zip(m.triangles, m.areas):
        exact += a / 3 * np.sum(f(rule_b @ t) ** 2)
    assert np.isclose(v @ (sp_.ll.matrix @ v), exact, rtol=1e-10, atol=1e-12)
