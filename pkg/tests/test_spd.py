import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import linalg

from riemintent import spd
from helpers import random_spd, ref_exp_map, ref_geodesic_midpoint, ref_log_map, rel_err


def test_log_map_of_base_is_zero():
    p = random_spd(np.random.default_rng(0), 5)
    assert np.abs(spd.log_map(p, p)).max() <= 1e-10


def test_log_map_identity_base_is_matrix_log():
    e = np.e
    np.testing.assert_allclose(spd.log_map(np.eye(2), np.diag([e, e**2])), np.diag([1.0, 2.0]), atol=1e-12)


def test_log_map_commuting_diagonals():
    # elementwise oracle p * log(p*/p) for commuting diagonal matrices
    p, q = np.array([4.0, 1.0]), np.array([1.0, 1.0])
    expected = np.diag(p * np.log(q / p))
    np.testing.assert_allclose(spd.log_map(np.diag(p), np.diag(q)), expected, atol=1e-12)
    assert expected[0, 0] == pytest.approx(4 * np.log(0.25))


def test_exp_map_examples():
    p = random_spd(np.random.default_rng(1), 4)
    np.testing.assert_allclose(spd.exp_map(p, np.zeros((4, 4))), p, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(spd.exp_map(np.eye(2), np.diag([1.0, 2.0])), np.diag([np.e, np.e**2]), rtol=1e-13)


@pytest.mark.parametrize("n", [2, 5, 30])
def test_maps_match_scipy_reference(n):
    rng = np.random.default_rng(n)
    p, q = random_spd(rng, n, 1e3), random_spd(rng, n, 1e3)
    s = spd.log_map(p, q)
    assert rel_err(s, ref_log_map(p, q)) < 1e-8
    assert rel_err(spd.exp_map(p, s), ref_exp_map(p, s)) < 1e-8
    np.testing.assert_array_equal(s, s.T)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        spd.log_map(np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        spd.exp_map(np.eye(3), np.zeros((2, 2)))


def test_non_spd_input_is_rejected():
    with pytest.raises(spd.NotSPDError):
        spd.log_map(np.diag([1.0, -1.0]), np.eye(2))


def test_inputs_are_symmetrized():
    p = random_spd(np.random.default_rng(2), 3)
    skewed = p + 1e-14 * np.triu(np.ones((3, 3)), 1)
    np.testing.assert_allclose(spd.log_map(skewed, p), np.zeros((3, 3)), atol=1e-10)


def test_frechet_mean_of_identical_points():
    a = random_spd(np.random.default_rng(3), 4)
    res = spd.frechet_mean([a, a, a])
    assert res.converged
    np.testing.assert_allclose(res.mean, a, rtol=1e-12)


def test_frechet_mean_single_point_is_exact():
    a = random_spd(np.random.default_rng(4), 6, 50.0)
    res = spd.frechet_mean([a])
    assert res.converged and res.iterations == 1
    np.testing.assert_array_equal(res.mean, spd.as_symmetric(a))


def test_frechet_mean_geometric_mean_of_scalars():
    res = spd.frechet_mean([np.eye(2), 4 * np.eye(2)])
    np.testing.assert_allclose(res.mean, 2 * np.eye(2), rtol=1e-10)


def test_frechet_mean_of_inverse_pair_is_midpoint():
    q = random_spd(np.random.default_rng(5), 5, 30.0)
    qi = np.linalg.inv(q)
    res = spd.frechet_mean([q, qi])
    mid = ref_geodesic_midpoint(q, qi)
    np.testing.assert_allclose(mid, np.eye(5), atol=1e-9)
    assert rel_err(res.mean, mid) < 1e-8


def test_frechet_mean_commuting_is_log_euclidean():
    rng = np.random.default_rng(6)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    pts = [(q * rng.uniform(0.1, 10.0, 4)) @ q.T for _ in range(7)]
    expected = linalg.expm(np.mean([linalg.logm(p).real for p in pts], axis=0))
    assert rel_err(spd.frechet_mean(pts).mean, expected) < 1e-8


def test_frechet_mean_reports_non_convergence():
    rng = np.random.default_rng(7)
    pts = [random_spd(rng, 5, 1e3) for _ in range(6)]
    res = spd.frechet_mean(pts, max_iter=1)
    assert not res.converged and res.iterations == 1
    assert np.all(np.linalg.eigvalsh(res.mean) > 0)


def test_frechet_mean_spread_points_do_not_diverge():
    # rank-deficient scatter of very short windows, lightly regularized
    rng = np.random.default_rng(8)
    pts = []
    for _ in range(40):
        x = rng.normal(size=(5, 12))
        c = x.T @ x / 4
        pts.append(c + 1e-6 * np.trace(c) / 12 * np.eye(12))
    res = spd.frechet_mean(pts)
    assert res.converged


def test_frechet_mean_validation():
    with pytest.raises(ValueError):
        spd.frechet_mean([])
    with pytest.raises(ValueError):
        spd.frechet_mean([np.eye(2)], tol=0.0)
    with pytest.raises(ValueError):
        spd.frechet_mean([np.eye(2), np.eye(3)])


def test_congruence_equivariance():
    rng = np.random.default_rng(9)
    pts = [random_spd(rng, 5, 100.0) for _ in range(8)]
    g = np.eye(5) + 0.3 * rng.normal(size=(5, 5))
    mu = spd.frechet_mean(pts).mean
    mu_g = spd.frechet_mean([g.T @ p @ g for p in pts]).mean
    assert rel_err(mu_g, g.T @ mu @ g) < 1e-6


def test_vectorize_examples():
    np.testing.assert_array_equal(spd.tangent_vectorize(np.diag([1.0, 2.0, 3.0])), [1, 0, 0, 2, 0, 3])
    assert spd.tangent_vectorize(np.zeros((30, 30))).shape == (465,)
    assert not spd.tangent_vectorize(np.zeros((30, 30))).any()
    assert spd.feature_length(30) == 465


def test_vectorize_row_major_order():
    s = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    np.testing.assert_array_equal(spd.tangent_vectorize(s), [1, 2, 3, 4, 5, 6])
    w = spd.tangent_vectorize(s, weighted=True)
    np.testing.assert_allclose(w, [1, 2 * np.sqrt(2), 3 * np.sqrt(2), 4, 5 * np.sqrt(2), 6])
    # the weighted form preserves the Frobenius norm
    assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(s))


symmetric = st.integers(1, 8).flatmap(
    lambda n: st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=n * n, max_size=n * n).map(
        lambda v: (lambda a: (a + a.T) / 2)(np.array(v).reshape(n, n))
    )
)


@given(symmetric, st.booleans())
def test_vectorize_is_injective(s, weighted):
    v = spd.tangent_vectorize(s, weighted)
    back = spd.tangent_unvectorize(v, weighted)
    np.testing.assert_allclose(back, s, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(spd.tangent_vectorize(back, weighted), v, rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.floats(1.0, 1e3))
def test_round_trip_property(n, seed, cond):
    rng = np.random.default_rng(seed)
    p, q = random_spd(rng, n, cond), random_spd(rng, n, cond)
    assert rel_err(spd.exp_map(p, spd.log_map(p, q)), q) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_mean_first_order_optimality(n, seed, k):
    rng = np.random.default_rng(seed)
    pts = [random_spd(rng, n, 50.0) for _ in range(k)]
    res = spd.frechet_mean(pts)
    assume(res.converged)  # spread-out sets can need more than max_iter steps
    grad = np.mean([ref_log_map(res.mean, p) for p in pts], axis=0)
    assert np.linalg.norm(grad) <= 1e-8 * max(1.0, np.linalg.norm(res.mean))
