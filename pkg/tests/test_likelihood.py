import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tacmix.distribution import make_grid
from tacmix.episodes import Episode
from tacmix.likelihood import (
    LogLikelihoodMatrix,
    NoiseModel,
    cached_log_node_likelihoods,
    content_hash,
    load_matrix,
    log_gradient,
    log_likelihood,
    log_likelihood_gradient,
    log_node_likelihoods,
    logsumexp,
    responsibilities,
    save_matrix,
)
from tacmix.synthetic import generate_dataset

SIGMA2 = 1e-6
LOG_PHI0 = -0.5 * math.log(2 * math.pi * SIGMA2)


def random_simplex(r, M):
    p = r.exponential(size=M)
    return p / p.sum()


@st.composite
def instances(draw, max_m=10, max_M=10, scale=3.0):
    m = draw(st.integers(1, max_m))
    M = draw(st.integers(1, max_M))
    r = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    return r.normal(0, scale, (m, M)), r


@pytest.fixture(scope="module")
def small_data():
    ds = generate_dataset(3, seed=5)
    return ds.episodes, make_grid([(0, 1), (0, 1)], 3, 3)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(0.0)
    with pytest.raises(NotImplementedError):
        NoiseModel(1e-6, family="laplace")


def test_scalar_log_density_by_hand():
    val = NoiseModel(SIGMA2).log_density(0.001)
    assert abs(val - (LOG_PHI0 - 0.5)) < 1e-12


def test_zero_brac_zero_tac(small_data):
    _, grid = small_data
    e = Episode("z", 5 / 60, np.zeros(12), np.zeros(12))
    L = log_node_likelihoods([e], grid, 8, NoiseModel(SIGMA2))
    np.testing.assert_allclose(L.values, 12 * LOG_PHI0, rtol=1e-14)


def test_single_observation_residual():
    grid = make_grid([(0.5, 0.6), (0.5, 0.6)], 1, 1)
    e = Episode("one", 5 / 60, np.zeros(1), np.array([0.001]))
    L = log_node_likelihoods([e], grid, 8, NoiseModel(SIGMA2))
    assert abs(L.values[0, 0] - (LOG_PHI0 - 0.5)) < 1e-9


def test_identical_nodes_identical_columns(small_data):
    episodes, _ = small_data
    # zero q2 spread cannot be expressed, so compare the same node listed twice
    grid = make_grid([(0.3, 0.3000001), (0.5, 0.6)], 1, 1)
    a = log_node_likelihoods(episodes, grid, 8).values
    b = log_node_likelihoods(episodes, grid, 8).values
    np.testing.assert_array_equal(a, b)


def test_matrix_shape_and_finiteness(small_data):
    episodes, grid = small_data
    L = log_node_likelihoods(episodes, grid, 8)
    assert L.shape == (3, 9)
    assert np.all(np.isfinite(L.values))
    assert L.episode_ids == tuple(e.id for e in episodes)


def test_matrix_deterministic_and_thread_independent(small_data):
    episodes, grid = small_data
    a = log_node_likelihoods(episodes, grid, 8, threads=1).values
    b = log_node_likelihoods(episodes, grid, 8, threads=1).values
    c = log_node_likelihoods(episodes, grid, 8, threads=4).values
    assert a.tobytes() == b.tobytes() == c.tobytes()


def test_differing_lengths():
    grid = make_grid([(0.2, 0.8), (0.2, 0.8)], 2, 1)
    short = Episode("s", 0.1, np.full(5, 0.05), np.full(5, 0.01))
    long = Episode("l", 0.1, np.full(9, 0.05), np.full(9, 0.01))
    L = log_node_likelihoods([short, long], grid, 8)
    alone = log_node_likelihoods([short], grid, 8)
    np.testing.assert_allclose(L.values[0], alone.values[0], rtol=1e-13)
    np.testing.assert_array_equal(L.n_obs, [5, 9])


def test_with_sigma2_matches_recompute(small_data):
    episodes, grid = small_data
    L = log_node_likelihoods(episodes, grid, 8, NoiseModel(1e-6))
    L2 = log_node_likelihoods(episodes, grid, 8, NoiseModel(4e-6))
    np.testing.assert_allclose(L.with_sigma2(4e-6).values, L2.values, rtol=1e-12)


def test_hand_mixture_log_half():
    L = np.log([[0.2, 0.8]])
    assert abs(log_likelihood([0.5, 0.5], L) - math.log(0.5)) < 1e-15


@given(instances(max_M=1))
def test_single_node_mixture(inst):
    L, _ = inst
    assert math.isclose(log_likelihood([1.0], L), L.sum(), rel_tol=1e-12, abs_tol=1e-12)
    np.testing.assert_allclose(log_likelihood_gradient([1.0], L), [L.shape[0]], rtol=1e-12)


@given(instances())
def test_equal_columns_independent_of_p(inst):
    L, r = inst
    L = np.repeat(L[:, :1], L.shape[1], axis=1)
    p, q = random_simplex(r, L.shape[1]), random_simplex(r, L.shape[1])
    assert math.isclose(log_likelihood(p, L), log_likelihood(q, L), rel_tol=1e-12, abs_tol=1e-12)
    g = log_likelihood_gradient(p, L)
    np.testing.assert_allclose(g, g[0], rtol=1e-12)


def test_off_simplex_rejected():
    L = np.zeros((2, 3))
    for p in ([0.5, 0.5, 0.1], [1.2, -0.2, 0.0], [np.nan, 0.5, 0.5]):
        with pytest.raises(ValueError):
            log_likelihood(p, L)


def test_zero_weight_skipped():
    L = np.array([[0.0, -1e6, 5.0]])
    assert math.isclose(log_likelihood([0.5, 0.5, 0.0], L), math.log(0.5 + 0.5 * math.exp(-1e6)))


def test_no_underflow_with_huge_magnitudes():
    L = np.array([[-30000.0, -30001.0], [-29999.0, -30005.0]])
    val = log_likelihood([0.5, 0.5], L)
    expect = math.log(0.5) * 2 + (-30000 + math.log1p(math.exp(-1))) + (-29999 + math.log1p(math.exp(-6)))
    assert math.isclose(val, expect, rel_tol=1e-14)


@given(instances())
def test_gradient_matches_central_differences(inst):
    L, r = inst
    M = L.shape[1]
    p = random_simplex(r, M)
    g = log_likelihood_gradient(p, L)
    h = 1e-6
    for j in range(M):
        e = np.zeros(M)
        e[j] = h
        # evaluate off-simplex directly through the unconstrained formula
        f = lambda w: float(np.sum(logsumexp(L + np.log(w)[None, :], axis=1)))
        fd = (f(p + e) - f(p - e)) / (2 * h)
        assert abs(fd - g[j]) <= 1e-6 * max(1.0, abs(g[j]))


@given(instances())
def test_log_gradient_consistent(inst):
    L, r = inst
    p = random_simplex(r, L.shape[1])
    np.testing.assert_allclose(np.exp(log_gradient(p, L)), log_likelihood_gradient(p, L), rtol=1e-12)


@given(instances(), st.floats(0.01, 0.99))
def test_midpoint_concavity(inst, lam):
    L, r = inst
    p, q = random_simplex(r, L.shape[1]), random_simplex(r, L.shape[1])
    mix = lam * p + (1 - lam) * q
    mix /= mix.sum()
    assert log_likelihood(mix, L) >= lam * log_likelihood(p, L) + (1 - lam) * log_likelihood(q, L) - 1e-10


@given(instances())
def test_row_shift_equivariance(inst):
    L, r = inst
    c = r.normal(0, 100, L.shape[0])
    p = random_simplex(r, L.shape[1])
    lhs = log_likelihood(p, L + c[:, None])
    assert math.isclose(lhs, log_likelihood(p, L) + c.sum(), rel_tol=1e-12, abs_tol=1e-9)


@given(instances())
def test_responsibilities_are_row_stochastic(inst):
    L, r = inst
    W = responsibilities(random_simplex(r, L.shape[1]), L)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, rtol=1e-12)


def test_logsumexp_edge_rows():
    A = np.array([[-np.inf, -np.inf], [0.0, 0.0]])
    out = logsumexp(A, axis=1)
    assert out[0] == -np.inf and math.isclose(out[1], math.log(2))


def test_save_load_roundtrip(tmp_path, small_data):
    episodes, grid = small_data
    L = log_node_likelihoods(episodes, grid, 8)
    path = save_matrix(L, tmp_path / "m.llm")
    back = load_matrix(path)
    assert back.values.tobytes() == L.values.tobytes()
    assert back.ssr.tobytes() == L.ssr.tobytes()
    assert back.grid == grid and back.episode_ids == L.episode_ids
    assert back.content_hash == L.content_hash and back.sigma2 == L.sigma2
    raw = path.read_bytes()
    assert raw[:8] == b"TACMIXLL"


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.llm"
    p.write_bytes(b"not a matrix")
    with pytest.raises(ValueError):
        load_matrix(p)


def test_content_hash_sensitivity(small_data):
    episodes, grid = small_data
    h = content_hash(episodes, grid, 8, SIGMA2)
    assert h == content_hash(episodes, grid, 8, SIGMA2)
    assert h != content_hash(episodes, grid, 16, SIGMA2)
    assert h != content_hash(episodes, grid, 8, 2 * SIGMA2)
    assert h != content_hash(episodes[:2], grid, 8, SIGMA2)


def test_cache_hit_skips_simulation(tmp_path, small_data, caplog):
    episodes, grid = small_data
    with caplog.at_level(logging.INFO, logger="tacmix.likelihood"):
        L1, hit1 = cached_log_node_likelihoods(episodes, grid, 8, directory=tmp_path)
        L2, hit2 = cached_log_node_likelihoods(episodes, grid, 8, directory=tmp_path)
    assert (hit1, hit2) == (False, True)
    assert f"likelihood cache hit {L1.content_hash}" in caplog.text
    assert L1.values.tobytes() == L2.values.tobytes()


def test_subset_rows(small_data):
    episodes, grid = small_data
    L = log_node_likelihoods(episodes, grid, 8)
    sub = L.subset([0, 2])
    np.testing.assert_array_equal(sub.values, L.values[[0, 2]])
    assert sub.episode_ids == (episodes[0].id, episodes[2].id)
    assert isinstance(sub, LogLikelihoodMatrix)
