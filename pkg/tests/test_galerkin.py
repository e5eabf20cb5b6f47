import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from tacmix.galerkin import (
    MAX_MESH,
    ParameterVector,
    as_parameter,
    assemble_galerkin,
    build_system,
    continuous_operators,
    discretize,
    dump_matrices,
    matrix_exponential,
)

TAU = 5.0 / 60.0
positive = st.floats(0.01, 3.0)


def test_n2_mass_matrix_by_hand():
    g = assemble_galerkin(2)
    expected = np.array([[1 / 6, 1 / 12, 0], [1 / 12, 1 / 3, 1 / 12], [0, 1 / 12, 1 / 6]])
    np.testing.assert_allclose(g.mass, expected, rtol=0, atol=1e-15)


def test_n2_stiffness_by_hand():
    g = assemble_galerkin(2)
    expected = np.array([[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]])
    np.testing.assert_allclose(g.stiff_diffusion, expected, rtol=0, atol=1e-14)


@pytest.mark.parametrize("n", [2, 3, 8, 64])
def test_boundary_terms(n):
    g = assemble_galerkin(n)
    E = np.zeros((n + 1, n + 1))
    E[0, 0] = 1.0
    np.testing.assert_array_equal(g.boundary_evap, E)
    assert g.input_vec[n] == 1.0 and g.input_vec.sum() == 1.0
    assert g.output_vec[0] == 1.0 and g.output_vec.sum() == 1.0


@pytest.mark.parametrize("n", [2, 5, 17])
def test_tridiagonal_structure(n):
    g = assemble_galerkin(n)
    h = 1.0 / n
    M, K = g.mass, g.stiff_diffusion
    np.testing.assert_allclose(np.diag(M)[1:-1], 2 * h / 3)
    np.testing.assert_allclose(np.diag(M)[[0, -1]], h / 3)
    np.testing.assert_allclose(np.diag(M, 1), h / 6)
    np.testing.assert_allclose(np.diag(K)[1:-1], 2 / h)
    np.testing.assert_allclose(np.diag(K)[[0, -1]], 1 / h)
    np.testing.assert_allclose(np.diag(K, 1), -1 / h)
    assert np.count_nonzero(np.triu(M, 2)) == 0 and np.count_nonzero(np.triu(K, 2)) == 0
    # the hat functions sum to one, so the mass entries integrate to the interval length
    assert math.isclose(M.sum(), 1.0, rel_tol=1e-13)
    np.testing.assert_allclose(K @ np.ones(n + 1), 0.0, atol=1e-10)


@pytest.mark.parametrize("n", [1, 0, -3, MAX_MESH + 1])
def test_assemble_rejects_bad_mesh(n):
    with pytest.raises(ValueError):
        assemble_galerkin(n)


def test_matrices_read_only():
    g = assemble_galerkin(4)
    with pytest.raises(ValueError):
        g.mass[0, 0] = 1.0


@pytest.mark.parametrize("n", [2, 16, 128, 256])
def test_mass_spd(n):
    g = assemble_galerkin(n)
    np.testing.assert_array_equal(g.mass, g.mass.T)
    assert np.linalg.eigvalsh(g.mass).min() > 0


@given(q1=positive, n=st.integers(2, 64))
def test_coercive_form_is_spd(q1, n):
    g = assemble_galerkin(n)
    assert np.linalg.eigvalsh(q1 * g.stiff_diffusion + g.boundary_evap).min() > 0


def test_parameter_vector_validation():
    assert as_parameter((0.5, 1.0)) == ParameterVector(0.5, 1.0)
    for bad in [(0.0, 1.0), (1.0, -1.0), (math.nan, 1.0), (math.inf, 1.0)]:
        with pytest.raises(ValueError):
            ParameterVector(*bad)


def test_n2_operators_explicit_solve():
    g = assemble_galerkin(2)
    M = np.array([[1 / 6, 1 / 12, 0], [1 / 12, 1 / 3, 1 / 12], [0, 1 / 12, 1 / 6]])
    K = np.array([[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]])
    E = np.diag([1.0, 0.0, 0.0])
    Minv = np.linalg.inv(M)
    A, B = continuous_operators(g, (1.0, 1.0))
    np.testing.assert_allclose(A, -Minv @ (K + E), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(B, Minv @ np.array([0, 0, 1.0]), rtol=1e-12)


@given(q1=positive, q2=positive)
def test_operators_affine_in_q(q1, q2):
    g = assemble_galerkin(6)
    A1, B1 = continuous_operators(g, (q1, q2))
    A2, _ = continuous_operators(g, (2 * q1, q2))
    _, B2 = continuous_operators(g, (q1, 2 * q2))
    np.testing.assert_allclose(A2 - A1, -q1 * g.solve_mass(g.stiff_diffusion), atol=1e-9 * np.abs(A1).max())
    np.testing.assert_array_equal(B2, 2 * B1)


@given(q1=positive, n=st.integers(2, 40))
def test_continuous_spectrum_is_stable(q1, n):
    A, _ = continuous_operators(assemble_galerkin(n), (q1, 1.0))
    assert np.linalg.eigvals(A).real.max() < 0


def test_discretize_tau_zero():
    A = np.array([[-1.0, 0.3], [0.2, -2.0]])
    a, b = discretize(A, np.array([1.0, 2.0]), 0.0)
    np.testing.assert_array_equal(a, np.eye(2))
    np.testing.assert_array_equal(b, np.zeros(2))


def test_discretize_scalar_closed_form():
    a, b = discretize(np.array([[-1.0]]), np.array([1.0]), math.log(2.0))
    assert abs(a[0, 0] - 0.5) < 1e-15
    assert abs(b[0] - 0.5) < 1e-15


def test_discretize_rejects_bad_input():
    with pytest.raises(ValueError):
        discretize(np.array([[np.nan]]), np.array([1.0]), 1.0)
    with pytest.raises(ValueError):
        discretize(np.array([[-1.0]]), np.array([1.0]), -0.1)


@given(q1=positive, q2=positive, tau=st.floats(0.001, 1.0))
def test_discretize_semigroup(q1, q2, tau):
    A, B = continuous_operators(assemble_galerkin(8), (q1, q2))
    a1, _ = discretize(A, B, tau)
    a2, _ = discretize(A, B, 2 * tau)
    np.testing.assert_allclose(a2, a1 @ a1, atol=1e-10)


@given(q1=positive, q2=positive, tau=st.floats(0.01, 1.0))
def test_b_hat_matches_closed_form(q1, q2, tau):
    A, B = continuous_operators(assemble_galerkin(8), (q1, q2))
    a_hat, b_hat = discretize(A, B, tau)
    oracle = np.linalg.solve(A, (a_hat - np.eye(A.shape[0])) @ B)
    np.testing.assert_allclose(b_hat, oracle, rtol=1e-8, atol=1e-10)


def test_expm_zero_and_nilpotent():
    np.testing.assert_array_equal(matrix_exponential(np.zeros((3, 3))), np.eye(3))
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_array_equal(matrix_exponential(A), np.eye(2) + A)


@given(st.lists(st.floats(-20, 5), min_size=1, max_size=6))
def test_expm_diagonal(d):
    d = np.array(d)
    np.testing.assert_allclose(matrix_exponential(np.diag(d)), np.diag(np.exp(d)), rtol=1e-12, atol=1e-300)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12), scale=st.floats(0.001, 30.0))
def test_expm_matches_scipy(seed, n, scale):
    r = np.random.default_rng(seed)
    A = r.normal(size=(n, n))
    A = scale * A / np.linalg.norm(A, 1)
    ours, ref = matrix_exponential(A), scipy.linalg.expm(A)
    assert np.linalg.norm(ours - ref, 1) <= 1e-11 * max(1.0, np.linalg.norm(ref, 1))


def test_expm_errors():
    with pytest.raises(OverflowError):
        matrix_exponential(np.array([[1000.0]]))
    with pytest.raises(ValueError):
        matrix_exponential(np.array([[np.inf]]))
    with pytest.raises(ValueError):
        matrix_exponential(np.ones((2, 3)))


def test_spectral_radius_below_one():
    sys = build_system(assemble_galerkin(16), (0.8, 1.3), TAU)
    assert np.abs(np.linalg.eigvals(sys.a_hat)).max() < 1.0


def test_a_hat_decays_for_large_tau():
    sys = build_system(assemble_galerkin(8), (0.8, 1.3), 200.0)
    assert np.abs(sys.a_hat).max() < 1e-12


def test_c_hat_picks_surface_node():
    sys = build_system(assemble_galerkin(5), (0.5, 0.5), TAU)
    picks = [sys.c_hat @ np.eye(6)[j] for j in range(6)]
    assert picks == [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]


@given(q1=positive, q2=positive, n=st.integers(2, 64))
def test_galerkin_steady_state_is_exact(q1, q2, n):
    # the PDE steady state is linear in eta with surface value q2, which the
    # hat-function space represents exactly
    g = assemble_galerkin(n)
    x = np.linalg.solve(q1 * g.stiff_diffusion + g.boundary_evap, q2 * g.input_vec)
    assert abs(x[0] - q2) <= 1e-9 * q2


def test_dump_matrices(tmp_path):
    paths = dump_matrices(assemble_galerkin(3), tmp_path)
    assert len(paths) == 5
    mass = np.loadtxt(tmp_path / "mass_N3.csv", delimiter=",")
    np.testing.assert_array_equal(mass, assemble_galerkin(3).mass)
