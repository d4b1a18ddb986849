"""Unit tests for the Gaussian-mixture VAE and its clustering metrics."""

import numpy as np
import pytest

from distributions import bernoulli_from_logits, kl_diag_gaussian, log_prob, one_hot, rsample
from model_gmvae import (
    ESTIMATORS,
    ContingencyTable,
    GmvaeModel,
    GmvaeNets,
    clustering_accuracy,
    conditional_entropy,
    contingency_table,
    gmvae_cluster,
    gmvae_elbo_gumbel_kl,
    gmvae_elbo_gumbel_logprob,
    gmvae_elbo_marginalized,
    gmvae_elbo_sampled_y,
    gmvae_generate,
)
from networks import joined
from scipy import special
from tensor_core import DomainError, SeededRng, Tape, finite_difference_gradient, gradients

DATA_DIM = 8
LATENT_DIM = 2
HIDDEN = (16,)
TINY_DIM = 6
TINY_CLASSES = 3
TINY_HIDDEN = (8,)
ORACLE_DRAWS = 20000


def make_nets(classes: int = 3) -> GmvaeNets:
    return GmvaeNets(DATA_DIM, LATENT_DIM, classes, SeededRng(0, 3), HIDDEN)


def make_binary(n: int = 5, seed: int = 1) -> np.ndarray:
    return (SeededRng(seed).uniform((n, DATA_DIM)) > 0.5).astype(np.float64)


def bracket(nets: GmvaeNets, x: np.ndarray, y: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """log p(x | z) - KL(q(z | x, y) || p(z | y)) computed class by class."""
    q_z = nets.encoder(joined(x, y))
    z = rsample(q_z, None, eps)
    reconstruction = log_prob(bernoulli_from_logits(nets.decoder(z)), x)
    return (reconstruction - kl_diag_gaussian(q_z, nets.prior(y))).data


def assert_gradient_matches_finite_difference(param, loss_fn, rtol=1e-4, atol=1e-6):
    """Tape gradient of loss_fn() against central differences taken by editing param in place."""
    with Tape():
        loss = loss_fn()
    analytic = gradients(loss, {"p": param})["p"]

    def perturbed(value):
        saved = param.data
        param.data = value.data
        try:
            return loss_fn()
        finally:
            param.data = saved

    numeric = finite_difference_gradient(perturbed, param.data).data
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


def make_tiny_nets() -> GmvaeNets:
    return GmvaeNets(TINY_DIM, LATENT_DIM, TINY_CLASSES, SeededRng(0, 3), TINY_HIDDEN)


def tiny_example() -> np.ndarray:
    return np.array([[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]])


def enumerated_elbo(nets: GmvaeNets, x: np.ndarray, nodes: int = 80) -> float:
    """Sum over classes with Gauss-Hermite quadrature over z and closed-form Gaussian KLs."""
    t, w = np.polynomial.hermite_e.hermegauss(nodes)
    grid = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    weights = np.outer(w, w).reshape(-1) / (2.0 * np.pi)
    probs = special.softmax(nets.logits(x).data[0])
    total = 0.0
    for c in range(nets.num_classes):
        y = np.eye(nets.num_classes)[c : c + 1]
        q_z = nets.encoder(joined(x, y))
        mu_q, sigma_q = q_z.mu.data[0], q_z.sigma.data[0]
        mu_p = (y @ nets.prior_mu.data)[0]
        sigma_p = np.logaddexp(0.0, (y @ nets.prior_pre_sigma.data)[0])
        z = mu_q + sigma_q * grid
        log_lik = log_prob(bernoulli_from_logits(nets.decoder(z)), np.tile(x, (len(z), 1))).data
        kl = np.sum(np.log(sigma_p / sigma_q) + (sigma_q**2 + (mu_q - mu_p) ** 2) / (2.0 * sigma_p**2) - 0.5)
        total += probs[c] * (weights @ log_lik - kl)
    return total - float(np.sum(probs * np.log(probs * nets.num_classes)))


def estimator_draws(estimator: str, nets: GmvaeNets, tau: float = 0.5, seed: int = 7) -> np.ndarray:
    x = np.tile(tiny_example(), (ORACLE_DRAWS, 1))
    rng = SeededRng(seed, 2)
    if estimator == "marginalized":
        return gmvae_elbo_marginalized(nets, x, rng).data
    if estimator == "sampled_y":
        return gmvae_elbo_sampled_y(nets, x, rng).data
    if estimator == "gumbel_kl":
        return gmvae_elbo_gumbel_kl(nets, x, tau, rng).data
    return gmvae_elbo_gumbel_logprob(nets, x, tau, rng).data


def standard_error(values: np.ndarray) -> float:
    return float(values.std(ddof=1) / np.sqrt(len(values)))


class TestSingleClassAgreement:
    """With one class every estimator reduces to the plain VAE bound."""

    @pytest.mark.parametrize("estimator", ["sampled_y", "gumbel_kl"])
    def test_estimators_coincide(self, estimator):
        nets = make_nets(classes=1)
        x = make_binary()
        reference = gmvae_elbo_marginalized(nets, x, SeededRng(2)).data
        if estimator == "sampled_y":
            other = gmvae_elbo_sampled_y(nets, x, SeededRng(2)).data
        else:
            other = gmvae_elbo_gumbel_kl(nets, x, 0.5, SeededRng(2)).data
        np.testing.assert_allclose(other, reference, rtol=1e-12)

    def test_gumbel_logprob_is_sampled_kl_bound(self):
        nets = make_nets(classes=1)
        x = make_binary()
        y = np.ones((5, 1))
        eps = SeededRng(2).normal((5, LATENT_DIM))
        q_z = nets.encoder(joined(x, y))
        z = rsample(q_z, None, eps)
        expected = (
            log_prob(bernoulli_from_logits(nets.decoder(z)), x) + log_prob(nets.prior(y), z) - log_prob(q_z, z)
        ).data
        got = gmvae_elbo_gumbel_logprob(nets, x, 0.5, SeededRng(2)).data
        np.testing.assert_allclose(got, expected, rtol=1e-10)


class TestMarginalizedEstimator:
    """Tests for the estimator that sums over every class."""

    def test_matches_explicit_sum_over_classes(self):
        classes, batch = 3, 5
        nets = make_nets(classes)
        x = make_binary(batch)
        noise = SeededRng(3).normal((classes * batch, LATENT_DIM))
        probs = special.softmax(nets.logits(x).data, axis=1)
        per_class = np.column_stack(
            [
                bracket(nets, x, np.tile(np.eye(classes)[c], (batch, 1)), noise[c * batch : (c + 1) * batch])
                for c in range(classes)
            ]
        )
        kl = np.sum(probs * np.log(probs * classes), axis=1)
        expected = np.sum(probs * per_class, axis=1) - kl
        got = gmvae_elbo_marginalized(nets, x, None, noise=noise).data
        np.testing.assert_allclose(got, expected, rtol=1e-10)

    @pytest.mark.parametrize("estimator", ESTIMATORS)
    def test_every_estimator_gives_one_value_per_example(self, estimator):
        model = GmvaeModel(DATA_DIM, LATENT_DIM, 3, SeededRng(0), HIDDEN, estimator)
        values = model.elbo(make_binary(), None, SeededRng(4)).data
        assert values.shape == (5,)
        assert np.isfinite(values).all()

    def test_unknown_estimator(self):
        with pytest.raises(ValueError):
            GmvaeModel(DATA_DIM, LATENT_DIM, 3, SeededRng(0), HIDDEN, "reinforce")


class TestEstimatorsAgainstEnumeration:
    """Tests of the class-marginalized bound against an enumeration oracle and the sampled-class estimators."""

    def test_marginalized_mean_matches_enumeration(self):
        nets = make_tiny_nets()
        values = estimator_draws("marginalized", nets)
        oracle = enumerated_elbo(nets, tiny_example())
        assert abs(values.mean() - oracle) < 4.0 * standard_error(values) + 1e-3

    def test_sampled_class_agrees_in_mean(self):
        nets = make_tiny_nets()
        marginalized = estimator_draws("marginalized", nets)
        sampled = estimator_draws("sampled_y", nets, seed=8)
        allowance = 4.0 * np.hypot(standard_error(marginalized), standard_error(sampled))
        assert abs(marginalized.mean() - sampled.mean()) < allowance

    def test_marginalizing_the_class_reduces_variance(self):
        nets = make_tiny_nets()
        assert estimator_draws("marginalized", nets).var() < estimator_draws("sampled_y", nets, seed=8).var()

    @pytest.mark.parametrize("estimator", ["gumbel_kl", "gumbel_logprob"])
    def test_relaxation_bias_shrinks_with_temperature(self, estimator):
        nets = make_tiny_nets()
        reference = enumerated_elbo(nets, tiny_example())
        bias = [abs(estimator_draws(estimator, nets, tau).mean() - reference) for tau in (1.0, 0.5, 0.1)]
        assert bias[0] > bias[1] > bias[2]


class TestEstimatorGradients:
    """Tests that every estimator's tape gradient matches finite differences at frozen noise."""

    @pytest.mark.parametrize("estimator", ESTIMATORS)
    @pytest.mark.parametrize("name", ["prior.mu", "decoder.0.weight", "classifier.0.weight", "encoder.trunk.0.weight"])
    def test_parameter_gradient(self, estimator, name):
        nets = make_tiny_nets()
        x = (SeededRng(11).uniform((4, TINY_DIM)) > 0.5).astype(np.float64)
        params = {**nets.theta, **nets.phi}

        def loss():
            rng = SeededRng(12, 2)
            if estimator == "marginalized":
                return gmvae_elbo_marginalized(nets, x, rng).mean()
            if estimator == "sampled_y":
                return gmvae_elbo_sampled_y(nets, x, rng).mean()
            if estimator == "gumbel_kl":
                return gmvae_elbo_gumbel_kl(nets, x, 0.5, rng).mean()
            return gmvae_elbo_gumbel_logprob(nets, x, 0.5, rng).mean()

        assert_gradient_matches_finite_difference(params[name], loss)


class TestClustering:
    """Tests for cluster assignment and matched accuracy."""

    def test_permuted_labels_score_perfectly(self):
        predicted = np.array([0, 0, 1, 1, 2, 2])
        labels = np.array([2, 2, 0, 0, 1, 1])
        assert clustering_accuracy(contingency_table(predicted, labels, 3)) == 1.0

    def test_best_matching_counts(self):
        table = ContingencyTable(np.array([[3, 1], [2, 4]]))
        assert clustering_accuracy(table) == pytest.approx(0.7)

    def test_table_widens_for_extra_labels(self):
        table = contingency_table(np.array([0, 1, 1]), np.array([0, 1, 3]), 2)
        assert table.counts.shape == (2, 4)
        assert table.total == 3
        assert clustering_accuracy(table) == pytest.approx(2.0 / 3.0)

    def test_empty_table(self):
        with pytest.raises(DomainError):
            clustering_accuracy(ContingencyTable(np.zeros((2, 2), dtype=np.int64)))

    def test_cluster_assignment_and_entropy(self):
        nets = make_nets(classes=4)
        x = make_binary(6)
        clusters = gmvae_cluster(nets, x)
        assert clusters.shape == (6,)
        assert ((clusters >= 0) & (clusters < 4)).all()
        assert 0.0 <= conditional_entropy(nets, x) <= np.log(4.0) + 1e-12

    def test_eval_extras(self):
        model = GmvaeModel(DATA_DIM, LATENT_DIM, 3, SeededRng(0), HIDDEN)
        x = make_binary(6)
        assert set(model.eval_extras(x, None)) == {"cond_entropy"}
        with_labels = model.eval_extras(x, np.array([0, 1, 2, 0, 1, 2]))
        assert 0.0 < with_labels["cluster_acc"] <= 1.0


class TestGmvaeGeneration:
    """Tests for per-cluster sampling."""

    def test_generate_from_one_cluster(self):
        probs, samples = gmvae_generate(make_nets(), one_hot(np.array([1]), 3)[0], 4, SeededRng(5))
        assert probs.shape == samples.shape == (4, DATA_DIM)
        assert set(np.unique(samples)) <= {0.0, 1.0}

    def test_prior_parameters_belong_to_theta(self):
        nets = make_nets()
        assert {"prior.mu", "prior.pre_sigma"} <= set(nets.theta)
        assert not set(nets.theta) & set(nets.phi)
