import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmap.fem import Mesh, P1Space, interval_mesh, read_mesh, rectangle_mesh, write_mesh


@pytest.fixture(scope="module")
def space():
    return P1Space(rectangle_mesh(6, 4, lx=2.0, ly=1.0))


def test_mass_integrates_area(space):
    M = space.mass()
    ones = np.ones(space.dim)
    assert ones @ M @ ones == pytest.approx(2.0, rel=1e-13)
    assert space.mass(lumped=True).diagonal().sum() == pytest.approx(2.0, rel=1e-13)


def test_stiffness_annihilates_constants_and_is_psd(space):
    K = space.stiffness().toarray()
    np.testing.assert_allclose(K @ np.ones(space.dim), 0, atol=1e-12)
    np.testing.assert_allclose(K, K.T, atol=1e-14)
    assert np.linalg.eigvalsh(K).min() > -1e-12


def test_stiffness_energy_of_linear_field(space):
    # |grad(x + 2y)|^2 = 5 integrated over area 2
    u = space.mesh.nodes[:, 0] + 2 * space.mesh.nodes[:, 1]
    assert u @ space.stiffness() @ u == pytest.approx(10.0, rel=1e-12)


def test_weighted_mass_with_unit_coefficient_is_mass(space):
    np.testing.assert_allclose(space.weighted_mass(np.ones(space.dim)).toarray(), space.mass().toarray(), atol=1e-15)


@given(st.integers(0, 1000))
def test_contract_matches_weighted_mass(seed):
    sp_ = P1Space(rectangle_mesh(3, 3))
    rng = np.random.default_rng(seed)
    a, b, c = rng.standard_normal((3, sp_.dim))
    lhs = sp_.contract(a, b) @ c
    rhs = a @ sp_.weighted_mass(c) @ b
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_weighted_mass_exact_for_quadratic_integrand():
    # int_0^1 x * x * 1 dx with P1-exact coefficient x: integrand is cubic, exact for P1 triple products
    sp_ = P1Space(interval_mesh(5))
    x = sp_.mesh.nodes[:, 0]
    assert x @ sp_.weighted_mass(x) @ np.ones(sp_.dim) == pytest.approx(1 / 3, rel=1e-12)
    sq = P1Space(rectangle_mesh(4, 4))
    X = sq.mesh.nodes[:, 0]
    assert X @ sq.weighted_mass(X) @ X == pytest.approx(1 / 4, rel=1e-12)


def test_boundary_load_integrates_flux():
    sp_ = P1Space(rectangle_mesh(5, 7, lx=1.0, ly=3.0))
    assert sp_.boundary_load("left", 2.0).sum() == pytest.approx(6.0, rel=1e-13)
    y = sp_.mesh.nodes[:, 1]
    # int_0^3 y dy = 4.5 on the left edge
    assert sp_.boundary_load("left", y).sum() == pytest.approx(4.5, rel=1e-13)
    assert np.count_nonzero(sp_.boundary_load("top")) == 6


def test_mesh_roundtrip(tmp_path):
    m = rectangle_mesh(3, 2)
    path = tmp_path / "m.txt"
    write_mesh(m, path)
    r = read_mesh(path)
    np.testing.assert_array_equal(r.nodes, m.nodes)
    np.testing.assert_array_equal(r.cells, m.cells)
    for k in m.facets:
        np.testing.assert_array_equal(r.facets[k], m.facets[k])


def test_bad_mesh_rejected():
    with pytest.raises(ValueError):
        Mesh(np.zeros((3, 2)), [[0, 1, 5]])
    with pytest.raises(ValueError):
        P1Space(Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), [[0, 1, 2]]))
