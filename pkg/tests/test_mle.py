import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tacmix.distribution import make_grid
from tacmix.likelihood import log_likelihood, log_node_likelihoods
from tacmix.mle import (
    EstimatorConfig,
    FitResult,
    duality_gap,
    em_update,
    estimate,
    estimate_with_sigma2,
    project_simplex,
    sparsify,
)
from tacmix.synthetic import TruthSpec, brac_library, generate_dataset, generate_from_parameters

EM = EstimatorConfig("em")
PG = EstimatorConfig("projected-gradient")


def random_simplex(r, M):
    p = r.exponential(size=M)
    return p / p.sum()


@st.composite
def instances(draw, max_m=10, max_M=50):
    m = draw(st.integers(1, max_m))
    M = draw(st.integers(2, max_M))
    r = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    return r.normal(0, 3, (m, M)), r


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(algorithm="newton")
    with pytest.raises(ValueError):
        EstimatorConfig(tol=0.0)
    with pytest.raises(ValueError):
        EstimatorConfig(max_iter=0)


def test_em_hand_example():
    L = np.log([[0.9, 0.1], [0.1, 0.9]])
    np.testing.assert_allclose(em_update([0.5, 0.5], L), [0.5, 0.5], rtol=1e-15)
    p = em_update([0.8, 0.2], L)
    # 0.8 * 1/2 * (0.9/0.74 + 0.1/0.26)
    assert abs(p[0] - 0.6403326403326403) < 1e-12
    assert abs(p.sum() - 1.0) < 1e-15


def test_em_equal_columns_stationary(rng):
    L = np.repeat(rng.normal(size=(4, 1)), 5, axis=1)
    p = random_simplex(rng, 5)
    np.testing.assert_allclose(em_update(p, L), p, rtol=1e-13)


def test_em_m1_moves_toward_argmax(rng):
    L = rng.normal(size=(1, 6))
    p = em_update(np.full(6, 1 / 6), L)
    assert p.argmax() == L.argmax() and p[L.argmax()] > 1 / 6


def test_em_dimension_mismatch():
    with pytest.raises(ValueError):
        em_update([0.5, 0.5], np.zeros((2, 3)))


@given(instances(max_m=10, max_M=10))
def test_em_monotone_and_on_simplex(inst):
    L, r = inst
    p = random_simplex(r, L.shape[1])
    ll = log_likelihood(p, L)
    for _ in range(30):
        p = em_update(p, L)
        assert abs(p.sum() - 1.0) <= 1e-12 and p.min() >= 0
        new = log_likelihood(p, L)
        assert new >= ll - 1e-10
        ll = new


@given(instances())
def test_accelerated_history_monotone(inst):
    L, _ = inst
    fit = estimate(L, EM, record_history=True)
    assert np.all(np.diff(fit.history) >= -1e-10)


def test_single_node():
    fit = estimate(np.array([[-3.0], [-1.0]]))
    assert fit.iterations == 1 and fit.converged
    np.testing.assert_array_equal(fit.weights, [1.0])
    assert fit.final_loglik == -4.0


@pytest.mark.parametrize("cfg", [EM, PG], ids=["em", "pg"])
def test_m1_recovers_vertex(cfg, rng):
    for _ in range(10):
        M = int(rng.integers(2, 40))
        L = rng.normal(0, 3, (1, M))
        fit = estimate(L, cfg)
        vertex = np.zeros(M)
        vertex[L.argmax()] = 1.0
        assert 0.5 * np.abs(fit.weights - vertex).sum() < 1e-6


def test_cross_algorithm_m5_M20(rng):
    L = rng.normal(0, 3, (5, 20))
    a, b = estimate(L, EM), estimate(L, PG)
    assert abs(a.final_loglik - b.final_loglik) < 1e-6


@given(instances())
def test_cross_algorithm_property(inst):
    L, _ = inst
    a, b = estimate(L, EM), estimate(L, PG)
    assert abs(a.final_loglik - b.final_loglik) < 1e-6


@given(instances(max_M=20))
def test_optimum_has_small_duality_gap(inst):
    L, _ = inst
    fit = estimate(L, EM)
    assert fit.converged
    assert duality_gap(fit.weights, L) <= 1e-8 * (1 + abs(fit.final_loglik))


@given(instances(max_M=15))
def test_permutation_equivariance(inst):
    L, r = inst
    perm = r.permutation(L.shape[1])
    a = estimate(L, EM)
    b = estimate(L[:, perm], EM)
    assert math.isclose(a.final_loglik, b.final_loglik, rel_tol=1e-10, abs_tol=1e-8)
    # weights only on non-degenerate instances: ties admit many optima
    if np.linalg.matrix_rank(np.exp(L - L.max(axis=1, keepdims=True))) == min(L.shape):
        np.testing.assert_allclose(b.weights, a.weights[perm], atol=1e-4)


def test_max_iter_returns_unconverged(rng):
    L = rng.normal(0, 3, (6, 30))
    fit = estimate(L, EstimatorConfig("em", max_iter=1, accelerate=False))
    assert not fit.converged and fit.iterations == 1
    assert abs(fit.weights.sum() - 1) < 1e-12


def test_nonfinite_matrix_rejected():
    with pytest.raises(ValueError):
        estimate(np.array([[0.0, np.nan]]))


def test_init_is_used(rng):
    L = rng.normal(size=(3, 4))
    fit = estimate(L, EstimatorConfig(max_iter=1, accelerate=False), init=[1, 0, 0, 0])
    # a zero weight stays zero under the multiplicative update
    assert fit.weights[1:].sum() == 0.0


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_project_simplex(v):
    v = np.array(v)
    p = project_simplex(v)
    assert abs(p.sum() - 1) < 1e-12 and p.min() >= 0
    # projection is idempotent and optimal against random feasible points
    np.testing.assert_allclose(project_simplex(p), p, atol=1e-12)
    r = np.random.default_rng(0)
    for _ in range(5):
        q = random_simplex(r, v.size)
        assert np.sum((v - p) ** 2) <= np.sum((v - q) ** 2) + 1e-12


def test_fit_support_and_dict(rng):
    grid = make_grid([(0, 1), (0, 1)], 3, 3)
    ds = generate_dataset(4, seed=2)
    L = log_node_likelihoods(ds.episodes, grid, 8)
    fit = estimate(L)
    assert fit.distribution is not None and fit.distribution.grid == grid
    assert fit.support_size == int(np.sum(fit.weights > fit.config.prune_eps))
    d = fit.to_dict(seed=7)
    assert set(d) >= {"grid", "weights", "final_loglik", "iterations", "support_size", "config", "seed"}
    assert d["seed"] == 7 and d["config"]["algorithm"] == "em"


def test_sparsify_already_sparse(rng):
    L = rng.normal(0, 3, (1, 10))
    fit = estimate(L)
    assert sparsify(fit, L) is fit


def test_sparsify_m1_single_support(rng):
    L = rng.normal(0, 3, (1, 10))
    dense = estimate(L, EstimatorConfig(max_iter=2, accelerate=False))
    out = sparsify(dense, L, tol=1.0)
    assert np.count_nonzero(out.weights) == 1


def test_sparsify_m3_M50(rng):
    L = rng.normal(0, 3, (3, 50))
    fit = estimate(L, EstimatorConfig(max_iter=50, accelerate=False))
    assert np.count_nonzero(fit.weights) > 3
    out = sparsify(fit, L)
    assert out.sparsified and not out.sparsify_failed
    assert np.count_nonzero(out.weights) <= 3
    assert fit.final_loglik - out.final_loglik < 1e-6


def test_sparsify_failure_flag():
    # an unconverged fit whose largest weight sits on the worse node: keeping
    # only that node loses far more than tol, so the fit comes back flagged
    L = np.array([[0.0, -10.0]])
    w = np.array([0.4, 0.6])
    fit = FitResult(w, log_likelihood(w, L), 1, False, 2, EM)
    out = sparsify(fit, L, tol=1e-6)
    assert out.sparsify_failed and not out.sparsified
    assert out.weights is fit.weights


def test_joint_sigma2_recovers_noise_level():
    # truth on grid nodes, so the residual variance is the sensor noise alone
    grid = make_grid([(0, 1), (0, 1)], 6, 6)
    q = grid.nodes[[8, 15, 22, 8, 15, 22, 29, 29, 8]]
    ds = generate_from_parameters(q, brac_library(), TruthSpec(), seed=4)
    L = log_node_likelihoods(ds.episodes, grid, 128)
    fit, s2 = estimate_with_sigma2(L, sigma2_init=1e-5)
    assert fit.converged
    assert 0.8e-6 < s2 < 1.25e-6
