import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from qldm.metrics import (
    GaussianFit,
    MetricError,
    frechet_distance,
    frechet_from_fits,
    kid,
    mmd2_unbiased,
    poly_kernel,
)


def brute_mmd2(x, y):
    m, n = len(x), len(y)
    d = x.shape[1]
    k = lambda a, b: (sum(a[i] * b[i] for i in range(d)) / d + 1.0) ** 3  # noqa: E731
    sxx = sum(k(x[i], x[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    syy = sum(k(y[i], y[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    sxy = sum(k(x[i], y[j]) for i in range(m) for j in range(n)) / (m * n)
    return sxx + syy - 2 * sxy


def test_identical_datasets_zero():
    x = np.random.default_rng(0).normal(size=(500, 10))
    assert abs(frechet_distance(x, x)) < 1e-8


def test_analytic_fits_mean_shift():
    m = np.array([0.5, -1.0, 2.0, 0.0])
    a = GaussianFit(np.zeros(4), np.eye(4))
    b = GaussianFit(m, np.eye(4))
    assert frechet_from_fits(a, b) == pytest.approx(m @ m, abs=1e-10)


def test_analytic_fits_general_covariance():
    q = ortho_group.rvs(5, random_state=2)
    cov = q @ np.diag([0.1, 0.5, 1, 2, 3]) @ q.T
    a = GaussianFit(np.zeros(5), cov)
    # commuting covariances: sum of (sqrt(λ) - sqrt(μ))^2
    b = GaussianFit(np.zeros(5), q @ np.diag([1, 1, 1, 1, 1.0]) @ q.T)
    want = sum((np.sqrt(v) - 1) ** 2 for v in [0.1, 0.5, 1, 2, 3])
    assert frechet_from_fits(a, b) == pytest.approx(want, abs=1e-10)


@pytest.mark.parametrize("sigma, tau", [(1.0, 2.0), (0.3, 0.3), (2.5, 0.1)])
def test_one_dimensional_formula(sigma, tau):
    a = GaussianFit(np.zeros(1), np.array([[sigma**2]]))
    b = GaussianFit(np.zeros(1), np.array([[tau**2]]))
    assert frechet_from_fits(a, b) == pytest.approx((sigma - tau) ** 2, abs=1e-12)


def test_sample_fits_approach_mean_shift():
    rng = np.random.default_rng(3)
    m = np.full(3, 0.5)
    a = rng.standard_normal((20000, 3))
    b = rng.standard_normal((20000, 3)) + m
    # sampling std of the estimate is about 2*sqrt(2 m.m / N) ~ 0.017
    assert frechet_distance(a, b) == pytest.approx(m @ m, abs=0.06)


@settings(deadline=None, max_examples=30)
@given(seed=st.integers(0, 2**32 - 1))
def test_frechet_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(60, 4)) @ rng.normal(size=(4, 4))
    b = rng.normal(size=(80, 4)) + 1
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)
    # rounding in the nested square roots scales with the covariance magnitude
    assert abs(frechet_distance(a, a)) < 1e-8 * (1 + np.trace(np.cov(a.T)))


def test_frechet_errors():
    with pytest.raises(MetricError):
        frechet_distance(np.zeros((3, 5)), np.zeros((10, 5)))
    with pytest.raises(MetricError):
        frechet_distance(np.zeros((10, 3)), np.zeros((10, 4)))
    bad = GaussianFit(np.zeros(2), np.diag([1.0, -1.0]))
    with pytest.raises(MetricError):
        frechet_from_fits(bad, GaussianFit(np.zeros(2), np.eye(2)))


def test_kernel_value():
    assert poly_kernel(np.ones(10), np.ones(10))[0, 0] == 8.0


def test_mmd_matches_brute_force():
    rng = np.random.default_rng(4)
    for m, n in [(2, 2), (7, 11), (20, 20), (20, 13)]:
        x = rng.normal(size=(m, 5))
        y = rng.normal(size=(n, 5)) + 0.3
        assert mmd2_unbiased(x, y) == pytest.approx(brute_mmd2(x, y), abs=1e-12)


def test_kid_same_distribution_is_near_zero():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(2, 1000, 10))
    rep = kid(a, b, subset_size=100, n_subsets=50, seed=0)
    assert abs(rep.mean) < 3 * rep.std
    assert (rep.subset_size, rep.n_subsets) == (100, 50)


def test_kid_detects_shift():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(500, 10))
    b = rng.normal(size=(500, 10)) + 1.0
    rep = kid(a, b, subset_size=100, n_subsets=20, seed=0)
    assert rep.mean > 3 * rep.std


def test_kid_single_subset_std_zero():
    rng = np.random.default_rng(7)
    rep = kid(rng.normal(size=(50, 3)), rng.normal(size=(50, 3)), subset_size=20, n_subsets=1)
    assert rep.std == 0.0


def test_kid_subset_too_large():
    with pytest.raises(MetricError):
        kid(np.zeros((50, 3)), np.zeros((60, 3)), subset_size=55)


def test_kid_invariant_to_joint_rotation():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(200, 6))
    b = rng.normal(size=(200, 6)) * 1.3
    for s in range(3):
        q = ortho_group.rvs(6, random_state=s)
        r1 = kid(a, b, 50, 10, seed=11)
        r2 = kid(a @ q, b @ q, 50, 10, seed=11)
        assert r1.mean == pytest.approx(r2.mean, abs=1e-10)
        assert r1.std == pytest.approx(r2.std, abs=1e-10)
