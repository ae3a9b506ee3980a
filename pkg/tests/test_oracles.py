import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import multivariate_normal

from pmcem.errors import InvalidArgumentError, ShapeError
from pmcem.numkit import make_rng
from pmcem.operators import awgn, inpaint
from pmcem.oracles import (GaussianPrior, GmmPrior, GridSpec, gaussian_posterior, gmm_log_density, gmm_sample,
                           gmm_score_sigma, grid_posterior, isotropic_gmm, psnr, random_directions,
                           sliced_wasserstein)


def test_conjugate_1d():
    post = gaussian_posterior(GaussianPrior([0.0], [[1.0]]), [[1.0]], [2.0], 1.0)
    assert post.mean[0] == pytest.approx(1.0)
    assert post.cov[0, 0] == pytest.approx(0.5)


def test_uninformative_likelihood():
    prior = GaussianPrior([0.5, -1.0], [[2.0, 0.3], [0.3, 1.0]])
    post = gaussian_posterior(prior, np.eye(2), [10.0, 10.0], 1e8)
    np.testing.assert_allclose(post.mean, prior.mean, atol=1e-6)
    np.testing.assert_allclose(post.cov, prior.cov, atol=1e-6)


def test_masked_coordinate_keeps_prior_marginal():
    prior = GaussianPrior([0.3, -0.7], [[1.0, 0.0], [0.0, 0.5]])
    post = gaussian_posterior(prior, np.diag([1.0, 0.0]), [1.2, 0.0], 0.4)
    assert post.mean[1] == pytest.approx(-0.7)
    assert post.cov[1, 1] == pytest.approx(0.5)
    grid = grid_posterior(lambda p: multivariate_normal(prior.mean, prior.cov).logpdf(p),
                          inpaint(np.array([1.0, 0.0]), 0.4), np.array([1.2, 0.0]), GridSpec((-5, -5), (5, 5), 300))
    assert abs(grid.mean[1] - post.mean[1]) < grid.cell[1]
    assert grid.cov[1, 1] == pytest.approx(0.5, rel=0.01)


def test_gmm_score_single_component():
    prior = isotropic_gmm([[0.0, 0.0]], 1.0)
    np.testing.assert_allclose(gmm_score_sigma(prior, np.array([[2.0, 0.0]]), 1.0), [[-1.0, 0.0]], atol=1e-14)


def test_gmm_score_symmetric_zero():
    prior = isotropic_gmm([[1.5, -0.5], [-1.5, 0.5]], 0.3)
    np.testing.assert_allclose(gmm_score_sigma(prior, np.zeros((1, 2)), 0.4), 0.0, atol=1e-14)


def _random_gmm(seed):
    rng = make_rng(seed)
    k = int(rng.integers(1, 5))
    comps = []
    for _ in range(k):
        a = rng.standard_normal((2, 2))
        comps.append(GaussianPrior(2 * rng.standard_normal(2), a @ a.T + 0.2 * np.eye(2)))
    w = rng.random(k) + 0.1
    return GmmPrior(w / w.sum(), tuple(comps))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), sigma=st.floats(0.0, 3.0))
def test_gmm_score_matches_finite_differences(seed, sigma):
    prior = _random_gmm(seed)
    x = make_rng(seed + 1).standard_normal((5, 2)) * 2
    h = 1e-5
    fd = np.zeros_like(x)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd[:, j] = (gmm_log_density(prior, x + e, sigma) - gmm_log_density(prior, x - e, sigma)) / (2 * h)
    got = gmm_score_sigma(prior, x, sigma)
    assert np.max(np.abs(got - fd) / np.maximum(np.abs(fd), 1.0)) < 1e-6


def test_gmm_log_density_normalized():
    prior = _random_gmm(3)
    grid = GridSpec((-15, -15), (15, 15), 600)
    pts = grid.centers()
    mass = np.exp(gmm_log_density(prior, pts, 0.5)).sum() * grid.cell[0] * grid.cell[1]
    assert mass == pytest.approx(1.0, abs=1e-4)


def test_gmm_log_density_far_field_is_finite():
    prior = isotropic_gmm([[0.0, 0.0], [1.0, 1.0]], 0.01)
    assert np.all(np.isfinite(gmm_score_sigma(prior, np.array([[50.0, -50.0]]), 0.0)))


def test_gmm_sample_moments():
    prior = isotropic_gmm([[2.0, 0.0], [-2.0, 0.0]], 0.5, [0.25, 0.75])
    x = gmm_sample(prior, 40_000, make_rng(0))
    assert x[:, 0].mean() == pytest.approx(0.25 * 2 - 0.75 * 2, abs=0.03)
    assert np.mean(x[:, 0] > 0) == pytest.approx(0.25, abs=0.01)


def test_gmm_validation():
    with pytest.raises(InvalidArgumentError):
        isotropic_gmm([[0.0, 0.0], [1.0, 1.0]], 1.0, [0.5, 0.6])
    with pytest.raises(ShapeError):
        GaussianPrior([0.0, 0.0], np.eye(3))


def _random_conjugate_problem(seed):
    rng = make_rng(seed)
    a = rng.standard_normal((2, 2))
    prior = GaussianPrior(rng.standard_normal(2), a @ a.T + 0.5 * np.eye(2))
    y = prior.mean + rng.standard_normal(2)
    noise = float(0.3 + rng.random())
    return prior, y, noise


@pytest.mark.parametrize("seed", range(10))
def test_grid_matches_conjugate_mean(seed):
    prior, y, noise = _random_conjugate_problem(seed)
    exact = gaussian_posterior(prior, np.eye(2), y, noise)
    spec = GridSpec(tuple(exact.mean - 6), tuple(exact.mean + 6), 200)
    grid = grid_posterior(lambda p: multivariate_normal(prior.mean, prior.cov).logpdf(p), awgn((2,), noise), y, spec)
    assert np.all(np.abs(grid.mean - exact.mean) < np.asarray(spec.cell))


def test_flat_prior_gives_likelihood():
    y = np.array([0.4, -0.3])
    grid = grid_posterior(lambda p: np.zeros(len(p)), awgn((2,), 0.5), y, GridSpec((-5, -5), (5, 5), 250))
    np.testing.assert_allclose(grid.mean, y, atol=grid.cell[0])
    np.testing.assert_allclose(grid.cov, 0.25 * np.eye(2), atol=0.01)


def test_grid_refinement_converges():
    prior = isotropic_gmm([[2.0, 2.0], [-2.0, -2.0]], 0.5, [0.3, 0.7])
    y = np.array([0.5, 0.0])
    means = []
    for n in (40, 80, 160):
        spec = GridSpec((-6, -6), (6, 6), n)
        means.append(grid_posterior(lambda p: gmm_log_density(prior, p), awgn((2,), 1.0), y, spec).mean)
    for coarse, fine, n in zip(means, means[1:], (40, 80)):
        assert np.max(np.abs(fine - coarse)) < 12 / n


def test_grid_sample_moments():
    y = np.array([0.4, -0.3])
    grid = grid_posterior(lambda p: np.zeros(len(p)), awgn((2,), 0.5), y, GridSpec((-5, -5), (5, 5), 100))
    s = grid.sample(50_000, make_rng(0))
    np.testing.assert_allclose(s.mean(axis=0), y, atol=0.01)
    np.testing.assert_allclose(np.cov(s.T), 0.25 * np.eye(2), atol=0.01)


def test_grid_needs_2d_operator():
    with pytest.raises(ShapeError):
        grid_posterior(lambda p: np.zeros(len(p)), awgn((3,), 0.5), np.zeros(3), GridSpec((-1, -1), (1, 1), 4))


def test_psnr_examples():
    x = np.zeros(100)
    assert psnr(x + 0.1, x) == pytest.approx(20.0)
    assert psnr(x, x) == float("inf")
    with pytest.raises(ShapeError):
        psnr(np.zeros(3), np.zeros(4))


def test_psnr_of_awgn_images():
    rng = make_rng(0)
    clean = rng.random((200, 16, 16))
    noisy = clean + 0.2 * rng.standard_normal(clean.shape)
    assert psnr(noisy, clean) == pytest.approx(-20 * np.log10(0.2), abs=0.1)


@settings(max_examples=30, deadline=None)
@given(m1=st.floats(1e-6, 10), m2=st.floats(1e-6, 10))
def test_psnr_strictly_decreasing(m1, m2):
    if m1 == m2:
        return
    a = psnr(np.full(4, np.sqrt(m1)), np.zeros(4))
    b = psnr(np.full(4, np.sqrt(m2)), np.zeros(4))
    assert (a > b) == (m1 < m2)


def test_sw_identical_and_translation():
    pts = make_rng(0).standard_normal((50, 2))
    assert sliced_wasserstein(pts, pts, 20, make_rng(1)) == 0.0
    assert sliced_wasserstein(np.array([[0.0]]), np.array([[1.0]]), 5, make_rng(1)) == pytest.approx(1.0)


def test_sw_shifted_gaussians_against_quadrature():
    rng = make_rng(0)
    a = rng.standard_normal((10_000, 2))
    b = rng.standard_normal((10_000, 2)) + np.array([2.0, 0.0])
    got = sliced_wasserstein(a, b, 100, make_rng(1))
    # projections differ only by the shift 2 cos(theta): average |2 cos theta| over the circle
    expected = integrate.quad(lambda t: abs(2 * np.cos(t)), 0, 2 * np.pi)[0] / (2 * np.pi)
    assert got == pytest.approx(expected, rel=0.05)


def test_sw_unequal_sizes():
    # 1-D: {0, 1} vs {0.5} -> sqrt(mean((q_a - 0.5)^2)) = 0.5
    assert sliced_wasserstein(np.array([[0.0], [1.0]]), np.array([[0.5]]), 3, make_rng(0)) == pytest.approx(0.5)
    a = np.array([[0.0], [1.0], [2.0]])
    b = np.array([[0.0], [2.0]])
    # quantile levels {1/3, 1/2, 2/3, 1}: pairs (0,0), (1,0), (1,2), (2,2) with widths 1/3, 1/6, 1/6, 1/3
    assert sliced_wasserstein(a, b, 2, make_rng(0)) == pytest.approx(np.sqrt(1 / 6 + 1 / 6))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 30), m=st.integers(1, 30))
def test_sw_symmetric_and_nonnegative(seed, n, m):
    rng = make_rng(seed)
    a, b = rng.standard_normal((n, 3)), rng.standard_normal((m, 3)) + 1
    ab = sliced_wasserstein(a, b, 10, make_rng(seed))
    ba = sliced_wasserstein(b, a, 10, make_rng(seed))
    assert ab >= 0
    assert ab == pytest.approx(ba, rel=1e-12, abs=1e-12)


def test_random_directions_are_unit_and_orthogonal_in_blocks():
    d = random_directions(3, 7, make_rng(0))
    assert d.shape == (7, 3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)
    np.testing.assert_allclose(d[:3] @ d[:3].T, np.eye(3), atol=1e-12)


def test_sw_validation():
    with pytest.raises(InvalidArgumentError):
        sliced_wasserstein(np.zeros((2, 2)), np.zeros((2, 2)), 0, make_rng(0))
    with pytest.raises(ShapeError):
        sliced_wasserstein(np.zeros((2, 2)), np.zeros((2, 3)), 3, make_rng(0))
