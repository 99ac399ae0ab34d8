import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergosafe.core import Workspace
from ergosafe.spectral import (
    FourierBasis,
    SpatialMeasure,
    basis_eval,
    basis_grad,
    load_grid_measure,
    measure_coefficients,
    save_grid_measure,
    trajectory_coefficients,
    uniform_grid,
)

UNIT = Workspace((1.0, 1.0))


@pytest.fixture(scope="module")
def basis():
    return FourierBasis(UNIT, 10)


def test_mode_layout(basis):
    assert basis.num_modes == 100
    assert tuple(basis.modes[basis.mode_index((3, 7))]) == (3, 7)
    with pytest.raises(IndexError):
        basis.mode_index((10, 0))


def test_norms_and_weights():
    b = FourierBasis(Workspace((2.0, 3.0)), 4)
    # h_k: each factor is L_i when k_i = 0, else L_i / 2
    assert b.norms[b.mode_index((0, 0))] == pytest.approx(np.sqrt(6.0))
    assert b.norms[b.mode_index((1, 0))] == pytest.approx(np.sqrt(3.0))
    assert b.norms[b.mode_index((2, 3))] == pytest.approx(np.sqrt(1.5))
    assert b.weights[0] == 1.0
    assert np.all(b.weights[1:] < 1.0)
    order = np.argsort(np.sum(b.modes**2, axis=1), kind="stable")
    assert np.all(np.diff(b.weights[order]) <= 0)


def test_basis_eval_examples(basis):
    assert basis_eval(basis, (0, 0), (0.3, 0.9)) == pytest.approx(1.0)
    assert basis_eval(basis, (1, 0), (0.0, 0.0)) == pytest.approx(1.414213562373095, rel=1e-12)
    assert basis_eval(basis, (1, 0), (0.5, 0.77)) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(IndexError):
        basis_eval(basis, (0, 12), (0.5, 0.5))


def test_basis_grad_examples(basis):
    np.testing.assert_array_equal(basis_grad(basis, (0, 0), (0.4, 0.6)), [0.0, 0.0])
    np.testing.assert_allclose(basis_grad(basis, (1, 0), (0.0, 0.0)), [0.0, 0.0], atol=1e-15)
    w, eps = np.array([0.25, 0.25]), 1e-6
    fd = [
        (basis_eval(basis, (1, 1), w + eps * e) - basis_eval(basis, (1, 1), w - eps * e)) / (2 * eps)
        for e in np.eye(2)
    ]
    np.testing.assert_allclose(basis_grad(basis, (1, 1), w), fd, rtol=1e-5)


def test_basis_grad_matches_finite_differences_everywhere(basis):
    pts = np.random.default_rng(0).uniform(0.01, 0.99, size=(100, 2))
    eps = 1e-6
    g = basis.gradient(pts)
    for i in range(2):
        step = np.zeros(2)
        step[i] = eps
        fd = (basis.evaluate(pts + step) - basis.evaluate(pts - step)) / (2 * eps)
        scale = np.max(np.abs(fd), axis=0, keepdims=True) + 1e-12
        assert np.max(np.abs(g[:, :, i] - fd) / scale) < 1e-5


def test_pullback_matches_dense_tensor(basis):
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 1, size=(40, 2))
    a = rng.standard_normal(basis.num_modes)
    avg, pull = basis.average_and_pullback(pts)
    np.testing.assert_allclose(avg, basis.evaluate(pts).mean(axis=0), atol=1e-13)
    np.testing.assert_allclose(pull(a), np.einsum("m,pmv->pv", a, basis.gradient(pts)), atol=1e-11)


def test_pullback_three_dimensions():
    b = FourierBasis(Workspace((1.0, 2.0, 0.5)), 4)
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 0.5, size=(15, 3))
    a = rng.standard_normal(b.num_modes)
    avg, pull = b.average_and_pullback(pts)
    np.testing.assert_allclose(avg, b.evaluate(pts).mean(axis=0), atol=1e-13)
    np.testing.assert_allclose(pull(a), np.einsum("m,pmv->pv", a, b.gradient(pts)), atol=1e-11)


def test_uniform_measure_coefficients(basis):
    phi = measure_coefficients(basis, SpatialMeasure.uniform())
    assert phi[basis.mode_index((0, 0))] == pytest.approx(1.0)
    assert phi[basis.mode_index((2, 3))] == 0.0
    grid = measure_coefficients(basis, uniform_grid(UNIT, 100))
    np.testing.assert_allclose(grid, phi, atol=1e-4)


def test_unnormalized_grid_rejected(basis):
    with pytest.raises(ValueError):
        measure_coefficients(basis, SpatialMeasure.from_grid(np.full((10, 10), 2.0), UNIT))
    with pytest.raises(ValueError):
        SpatialMeasure.from_grid(-np.ones((4, 4)), UNIT)


def test_trajectory_coefficients_examples(basis):
    w = np.array([0.3, 0.6])
    c = trajectory_coefficients(basis, np.tile(w, (7, 1)))
    np.testing.assert_allclose(c, basis.evaluate(w[None])[0], atol=1e-14)
    rand = np.random.default_rng(1).uniform(0, 1, size=(20, 2))
    assert trajectory_coefficients(basis, rand)[0] == pytest.approx(1.0)
    two = np.array([[0.2, 0.3], [0.7, 0.9]])
    # brute-force value from scalar cosines, frozen
    assert trajectory_coefficients(basis, two)[basis.mode_index((1, 2))] == pytest.approx(-0.7255282581475766, rel=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_trajectory_coefficients_reversal_invariant(seed):
    basis = FourierBasis(UNIT, 5)
    pts = np.random.default_rng(seed).uniform(0, 1, size=(12, 2))
    np.testing.assert_allclose(trajectory_coefficients(basis, pts), trajectory_coefficients(basis, pts[::-1]), atol=1e-14)


def test_trajectory_coefficients_clamp(basis):
    inside = trajectory_coefficients(basis, np.array([[1.0, 0.0], [0.5, 0.5]]))
    outside = trajectory_coefficients(basis, np.array([[1.3, -0.2], [0.5, 0.5]]))
    np.testing.assert_array_equal(inside, outside)


def test_grid_file_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    d = rng.uniform(0.1, 1.0, size=(6, 4))
    d /= d.sum() * (2.0 / 6) * (1.0 / 4)
    m = SpatialMeasure.from_grid(d, Workspace((2.0, 1.0)))
    path = tmp_path / "density.txt"
    save_grid_measure(m, path)
    back = load_grid_measure(path)
    np.testing.assert_array_equal(back.density, d)
    assert back.workspace.bounds == (2.0, 1.0)
    assert back.total_mass() == pytest.approx(1.0)


def test_grid_file_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("dims 2 2\nbounds 1 1\n1 1\n1 x\n")
    with pytest.raises(ValueError, match=r"bad.txt:4"):
        load_grid_measure(p)
    p.write_text("dims 2 2\nbounds 1 1\n1 1 1\n")
    with pytest.raises(ValueError, match="expected 4"):
        load_grid_measure(p)
    p.write_text("# only a comment\n1 2 3\n")
    with pytest.raises(ValueError, match="missing"):
        load_grid_measure(p)


def test_grid_measure_concentrated_density():
    # all mass in one cell: coefficients equal the basis at the cell center
    d = np.zeros((50, 50))
    d[10, 30] = 50 * 50
    basis = FourierBasis(UNIT, 6)
    phi = measure_coefficients(basis, SpatialMeasure.from_grid(d, UNIT))
    center = np.array([[10.5 / 50, 30.5 / 50]])
    np.testing.assert_allclose(phi, basis.evaluate(center)[0], atol=1e-12)
