"""Unit tests for distributions, samplers and divergences."""

import numpy as np
import pytest
from scipy import integrate, stats

from distributions import (
    LAMBDA_CLAMP,
    BernoulliVec,
    ContinuousBernoulliVec,
    DiagGaussian,
    FullGaussianCholesky,
    InfiniteDivergenceError,
    OneHotCategorical,
    RelaxedOneHotCategorical,
    bernoulli_from_logits,
    cb_log_normalizer,
    categorical_from_probs,
    continuous_bernoulli,
    continuous_bernoulli_icdf,
    continuous_bernoulli_mean,
    entropy_categorical,
    kl_categorical,
    kl_diag_gaussian,
    kl_full_gaussian_vs_standard,
    log_prob,
    rsample,
    sample,
    standard_normal,
)
from tensor_core import DomainError, SeededRng, ShapeError, Tensor

UPPER = np.array([[1.2, 0.4, -0.3], [0.0, 0.8, 0.5], [0.0, 0.0, 0.6]])
MC_SAMPLES = 100000
KL_DRAWS = range(50)


def diag_gaussian(mu, sigma) -> DiagGaussian:
    return DiagGaussian(Tensor(mu), Tensor(sigma))


def random_dims(draw: int) -> tuple[SeededRng, int]:
    rng = SeededRng(draw, 21)
    return rng, 1 + int(rng.uniform((1,))[0] * 4)


def assert_within_standard_errors(values: np.ndarray, expected: float, allowance: float = 4.0) -> None:
    standard_error = values.std(ddof=1) / np.sqrt(len(values))
    assert abs(values.mean() - expected) < allowance * standard_error


def tiled(row: np.ndarray) -> np.ndarray:
    return np.tile(row, (MC_SAMPLES, 1))


class TestGaussians:
    """Tests for diagonal and Cholesky-parametrized Gaussians."""

    def test_diag_log_prob_matches_scipy(self):
        mu = np.array([[0.5, -1.0], [2.0, 0.0]])
        sigma = np.array([[1.5, 0.3], [0.7, 2.0]])
        x = np.array([[0.0, -0.8], [1.0, 3.0]])
        expected = stats.norm(mu, sigma).logpdf(x).sum(axis=1)
        np.testing.assert_allclose(log_prob(diag_gaussian(mu, sigma), x).data, expected, rtol=1e-12)

    def test_full_log_prob_matches_scipy(self):
        mu = np.array([0.1, -0.2, 0.3])
        x = SeededRng(0).normal((5, 3))
        dist = FullGaussianCholesky(Tensor(mu), Tensor(UPPER))
        expected = stats.multivariate_normal(mu, UPPER.T @ UPPER).logpdf(x)
        np.testing.assert_allclose(log_prob(dist, x).data, expected, rtol=1e-10)

    def test_lower_triangle_is_ignored(self):
        mu = Tensor(np.zeros(3))
        x = SeededRng(1).normal((4, 3))
        noisy = UPPER + np.tril(np.full((3, 3), 9.0), k=-1)
        np.testing.assert_allclose(
            log_prob(FullGaussianCholesky(mu, Tensor(noisy)), x).data,
            log_prob(FullGaussianCholesky(mu, Tensor(UPPER)), x).data,
        )

    def test_full_rsample_covariance(self):
        dist = FullGaussianCholesky(Tensor(np.zeros((20000, 3))), Tensor(UPPER))
        draws = rsample(dist, SeededRng(2)).data
        np.testing.assert_allclose(np.cov(draws.T), UPPER.T @ UPPER, atol=0.08)

    def test_zero_sigma_rejected(self):
        with pytest.raises(DomainError):
            diag_gaussian([0.0, 0.0], [1.0, 0.0])

    def test_factor_shape_mismatch(self):
        with pytest.raises(ShapeError):
            FullGaussianCholesky(Tensor(np.zeros(2)), Tensor(UPPER))

    def test_non_finite_value_rejected(self):
        with pytest.raises(DomainError):
            log_prob(standard_normal(2), np.array([[0.0, np.inf]]))


class TestGaussianDivergences:
    """Tests for closed-form Gaussian KLs."""

    def test_kl_of_identical_is_zero(self):
        q = diag_gaussian([[0.3, -0.2]], [[0.5, 2.0]])
        np.testing.assert_allclose(kl_diag_gaussian(q, q).data, [0.0], atol=1e-14)

    def test_full_kl_matches_diagonal_when_factor_is_diagonal(self):
        mu = np.array([[0.4, -1.0, 0.2], [0.0, 0.5, 1.0]])
        sigma = np.array([0.7, 1.3, 0.9])
        full = kl_full_gaussian_vs_standard(FullGaussianCholesky(Tensor(mu), Tensor(np.diag(sigma))))
        diag = kl_diag_gaussian(diag_gaussian(mu, sigma), standard_normal(3))
        np.testing.assert_allclose(full.data, diag.data, rtol=1e-12)

    def test_full_kl_formula(self):
        mu = np.array([[0.2, 0.1, -0.4]])
        cov = UPPER.T @ UPPER
        expected = 0.5 * (np.trace(cov) + mu[0] @ mu[0] - 3 - np.linalg.slogdet(cov)[1])
        kl = kl_full_gaussian_vs_standard(FullGaussianCholesky(Tensor(mu), Tensor(UPPER)))
        assert kl.data[0] == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            kl_diag_gaussian(standard_normal(2), standard_normal(3))


class TestDivergencesAgainstMonteCarlo:
    """Tests that each closed-form KL matches the sampled mean of log q - log p."""

    @pytest.mark.parametrize("draw", KL_DRAWS)
    def test_diag_gaussian(self, draw):
        rng, dim = random_dims(draw)
        mu_q, mu_p = rng.normal((1, dim)), rng.normal((1, dim))
        sigma_q, sigma_p = np.exp(0.5 * rng.normal((1, dim))), np.exp(0.5 * rng.normal((1, dim)))
        q = diag_gaussian(tiled(mu_q), tiled(sigma_q))
        p = diag_gaussian(tiled(mu_p), tiled(sigma_p))
        z = rsample(q, SeededRng(draw, 22)).data
        values = (log_prob(q, z) - log_prob(p, z)).data
        expected = kl_diag_gaussian(diag_gaussian(mu_q, sigma_q), diag_gaussian(mu_p, sigma_p)).data[0]
        assert_within_standard_errors(values, expected)

    @pytest.mark.parametrize("draw", KL_DRAWS)
    def test_full_gaussian_vs_standard(self, draw):
        rng, dim = random_dims(draw)
        mu = rng.normal((1, dim))
        upper = np.triu(0.5 * rng.normal((dim, dim)), k=1) + np.diag(np.exp(0.3 * rng.normal((dim,))))
        q = FullGaussianCholesky(Tensor(tiled(mu)), Tensor(upper))
        z = rsample(q, SeededRng(draw, 22)).data
        values = (log_prob(q, z) - log_prob(standard_normal(dim), z)).data
        expected = kl_full_gaussian_vs_standard(FullGaussianCholesky(Tensor(mu), Tensor(upper))).data[0]
        assert_within_standard_errors(values, expected)

    @pytest.mark.parametrize("draw", KL_DRAWS)
    def test_categorical(self, draw):
        rng, dim = random_dims(draw)
        classes = dim + 1
        logits_q, logits_p = rng.normal((1, classes)), rng.normal((1, classes))
        q = OneHotCategorical(Tensor(tiled(logits_q)))
        p = OneHotCategorical(Tensor(tiled(logits_p)))
        y = sample(q, SeededRng(draw, 22))
        values = (log_prob(q, y) - log_prob(p, y)).data
        expected = kl_categorical(OneHotCategorical(Tensor(logits_q)), OneHotCategorical(Tensor(logits_p))).data[0]
        assert_within_standard_errors(values, expected)


class TestContinuousBernoulli:
    """Tests for the Continuous Bernoulli likelihood."""

    def test_normalizer(self):
        values = cb_log_normalizer(np.array([0.5, 0.2, 0.9])).data
        closed_form = [np.log(2.0), np.log(2.0 * np.arctanh(0.6) / 0.6), np.log(2.0 * np.arctanh(-0.8) / -0.8)]
        np.testing.assert_allclose(values, closed_form, rtol=1e-12)

    @pytest.mark.parametrize("lam", [0.1, 0.4999, 0.5, 0.8])
    def test_density_integrates_to_one(self, lam):
        dist = ContinuousBernoulliVec(Tensor([[lam]]))
        total, _ = integrate.quad(lambda v: np.exp(log_prob(dist, np.array([[v]])).data[0]), 0.0, 1.0)
        assert total == pytest.approx(1.0, abs=1e-7)

    @pytest.mark.parametrize("lam", [0.01, 0.1, 0.3, 0.499, 0.5, 0.501, 0.7, 0.9, 0.99])
    def test_simpson_integral_is_one(self, lam):
        grid = np.linspace(0.0, 1.0, 10001)
        dist = ContinuousBernoulliVec(Tensor(np.full((len(grid), 1), lam)))
        density = np.exp(log_prob(dist, grid[:, None]).data)
        assert integrate.simpson(density, x=grid) == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("lam", [0.5 - 1e-3, 0.5 + 1e-3])
    def test_normalizer_is_continuous_at_half(self, lam):
        assert abs(cb_log_normalizer(np.array([lam])).data[0] - np.log(2.0)) < 1e-5

    def test_normalizer_branches_meet(self):
        inside, outside = cb_log_normalizer(np.array([0.5 - 0.0099999, 0.5 - 0.0100001])).data
        assert inside == pytest.approx(outside, abs=1e-7)

    def test_clamps_decoder_outputs(self):
        dist = continuous_bernoulli(Tensor([[0.0, 1.0, 0.3]]))
        np.testing.assert_allclose(dist.lambdas.data, [[LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP, 0.3]])

    def test_value_outside_unit_interval(self):
        with pytest.raises(DomainError):
            log_prob(ContinuousBernoulliVec(Tensor([[0.3, 0.6]])), np.array([[0.2, 1.2]]))

    def test_icdf_is_uniform_at_half(self):
        u = np.array([0.1, 0.5, 0.9])
        np.testing.assert_allclose(continuous_bernoulli_icdf(np.full(3, 0.5), u), u)

    def test_sample_mean(self):
        lam = np.full((20000, 1), 0.8)
        draws = sample(ContinuousBernoulliVec(Tensor(lam)), SeededRng(4))
        assert ((draws >= 0) & (draws <= 1)).all()
        assert draws.mean() == pytest.approx(continuous_bernoulli_mean(np.array([0.8]))[0], abs=0.01)


class TestBernoulli:
    """Tests for the product Bernoulli."""

    def test_logits_and_probs_agree(self):
        logits = np.array([[-2.0, 0.5, 3.0]])
        x = np.array([[0.0, 1.0, 1.0]])
        from_logits = log_prob(bernoulli_from_logits(Tensor(logits)), x).data
        from_probs = log_prob(BernoulliVec(Tensor(1.0 / (1.0 + np.exp(-logits)))), x).data
        np.testing.assert_allclose(from_logits, from_probs, rtol=1e-12)

    def test_non_binary_value(self):
        with pytest.raises(DomainError):
            log_prob(bernoulli_from_logits(Tensor([[0.0, 0.0]])), np.array([[1.0, 0.5]]))


class TestCategorical:
    """Tests for one-hot categoricals and their relaxation."""

    def test_kl_to_self_is_zero(self):
        q = OneHotCategorical(Tensor([[0.3, -1.0, 2.0]]))
        np.testing.assert_allclose(kl_categorical(q, q).data, [0.0], atol=1e-14)

    def test_kl_infinite_when_prior_has_zero_mass(self):
        q = categorical_from_probs(np.array([[0.5, 0.5]]))
        p = categorical_from_probs(np.array([1.0, 0.0]))
        with pytest.raises(InfiniteDivergenceError):
            kl_categorical(q, p)

    def test_kl_finite_when_both_exclude_a_class(self):
        q = categorical_from_probs(np.array([[1.0, 0.0]]))
        p = categorical_from_probs(np.array([0.5, 0.5]))
        assert kl_categorical(q, p).data[0] == pytest.approx(np.log(2.0))

    def test_kl_class_count_mismatch(self):
        with pytest.raises(ShapeError):
            kl_categorical(OneHotCategorical(Tensor(np.zeros(2))), OneHotCategorical(Tensor(np.zeros(3))))

    def test_uniform_entropy(self):
        assert entropy_categorical(OneHotCategorical(Tensor(np.zeros(5)))).item() == pytest.approx(np.log(5.0))

    def test_non_one_hot_value(self):
        with pytest.raises(DomainError):
            log_prob(OneHotCategorical(Tensor(np.zeros((1, 3)))), np.array([[1.0, 1.0, 0.0]]))

    def test_sample_frequencies(self):
        logits = np.tile(np.log([0.2, 0.8]), (20000, 1))
        draws = sample(OneHotCategorical(Tensor(logits)), SeededRng(5))
        assert (draws.sum(axis=1) == 1).all()
        assert draws[:, 1].mean() == pytest.approx(0.8, abs=0.01)

    def test_relaxed_sample_lies_on_simplex(self):
        dist = RelaxedOneHotCategorical(Tensor(SeededRng(6).normal((10, 4))), 0.5)
        y = rsample(dist, SeededRng(7)).data
        assert (y > 0).all()
        np.testing.assert_allclose(y.sum(axis=1), np.ones(10))

    def test_relaxed_density_integrates_to_one(self):
        dist = RelaxedOneHotCategorical(Tensor([[0.3, -0.4]]), 1.5)
        total, _ = integrate.quad(lambda t: np.exp(log_prob(dist, np.array([[t, 1.0 - t]])).data[0]), 0.0, 1.0)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_relaxed_needs_positive_temperature(self):
        with pytest.raises(DomainError):
            RelaxedOneHotCategorical(Tensor(np.zeros(3)), 0.0)

    def test_relaxed_value_off_simplex(self):
        dist = RelaxedOneHotCategorical(Tensor(np.zeros((1, 2))), 0.5)
        with pytest.raises(DomainError):
            log_prob(dist, np.array([[0.3, 0.3]]))

    @pytest.mark.parametrize("temperature", [0.1, 0.5, 1.0])
    def test_relaxed_argmax_follows_softmax(self, temperature):
        logits = np.array([0.5, -0.3, 1.2])
        dist = RelaxedOneHotCategorical(Tensor(np.tile(logits, (100000, 1))), temperature)
        winners = np.argmax(sample(dist, SeededRng(8)), axis=1)
        frequencies = np.bincount(winners, minlength=3) / len(winners)
        np.testing.assert_allclose(frequencies, np.exp(logits) / np.exp(logits).sum(), atol=0.01)
