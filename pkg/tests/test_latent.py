import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aenib.autodiff import Tensor, grad_check
from aenib.latent import (GaussianLatent, LatentPair, kl_to_standard_normal,
                          nuisance_log_likelihood, reparam_sample)

rng = np.random.default_rng(7)


class TestGaussianLatent:
    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            GaussianLatent(np.zeros(3), np.array([1.0, 0.0, 1.0]))
        with pytest.raises(ValueError):
            GaussianLatent(np.zeros(3), np.array([1.0, -0.5, 1.0]))

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError):
            GaussianLatent(np.zeros(3), np.ones(4))


class TestLatentPair:
    def test_exactly_one_payload(self):
        z = Tensor(np.zeros((1, 4)))
        with pytest.raises(ValueError):
            LatentPair(z=z)  # no payload
        with pytest.raises(ValueError):
            LatentPair(z=z, z_n=Tensor(np.zeros((1, 2))), codes=np.zeros((1, 2), int),
                       quantized=Tensor(np.zeros((1, 2, 3))))
        LatentPair(z=z, z_n=Tensor(np.zeros((1, 2))))
        LatentPair(z=z, codes=np.zeros((1, 2), int), quantized=Tensor(np.zeros((1, 2, 3))))


class TestReparamSample:
    def test_zero_noise_identity(self):
        out = reparam_sample(GaussianLatent(np.array([1.0, 2.0]), np.array([1.0, 1.0])),
                             np.zeros(2))
        assert np.allclose(out.data, [1.0, 2.0])

    def test_standard_normal_passthrough(self):
        eps = rng.standard_normal(2)
        out = reparam_sample(GaussianLatent(np.zeros(2), np.ones(2)), eps)
        assert np.allclose(out.data, eps)

    def test_direct_evaluation(self):
        out = reparam_sample(GaussianLatent(np.array([1.0, 2.0]), np.array([0.5, 0.5])),
                             np.array([2.0, -2.0]))
        assert np.allclose(out.data, [2.0, 1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            reparam_sample(GaussianLatent(np.zeros(2), np.ones(2)), np.zeros(3))

    def test_gradients_are_identity_and_diag_noise(self):
        noise = rng.standard_normal(4)

        def fn(mu, sigma):
            return (reparam_sample(GaussianLatent(mu, sigma), noise)
                    * Tensor(np.arange(1.0, 5.0))).sum()

        err = grad_check(fn, [rng.standard_normal(4), rng.random(4) + 0.5])
        assert err < 1e-4
        mu = Tensor(rng.standard_normal(4), requires_grad=True)
        sigma = Tensor(rng.random(4) + 0.5, requires_grad=True)
        reparam_sample(GaussianLatent(mu, sigma), noise).sum().backward()
        assert np.allclose(mu.grad, np.ones(4))          # d out / d mu = I
        assert np.allclose(sigma.grad, noise)            # d out / d sigma = diag(noise)


class TestKL:
    def test_prior_matches_posterior(self):
        assert float(kl_to_standard_normal(GaussianLatent(np.zeros(1), np.ones(1)))) == 0.0

    def test_closed_form_values(self):
        assert float(kl_to_standard_normal(
            GaussianLatent(np.array([1.0]), np.array([1.0])))) == pytest.approx(0.5)
        assert float(kl_to_standard_normal(
            GaussianLatent(np.array([0.0]), np.array([2.0])))) == pytest.approx(
            0.5 * (3 - np.log(4)), abs=1e-12)

    def test_monte_carlo_cross_check(self):
        mu, sigma = 0.0, 2.0
        z = rng.normal(mu, sigma, size=400_000)
        log_q = -0.5 * ((z - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2 * np.pi)
        log_p = -0.5 * z ** 2 - 0.5 * np.log(2 * np.pi)
        mc = float(np.mean(log_q - log_p))
        exact = float(kl_to_standard_normal(GaussianLatent(np.array([mu]), np.array([sigma]))))
        assert mc == pytest.approx(exact, abs=2e-2)

    def test_permutation_invariance(self):
        mu, sigma = rng.standard_normal(6), rng.random(6) + 0.1
        perm = rng.permutation(6)
        a = float(kl_to_standard_normal(GaussianLatent(mu, sigma)))
        b = float(kl_to_standard_normal(GaussianLatent(mu[perm], sigma[perm])))
        assert a == pytest.approx(b, rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_nonnegative_on_random_inputs(self, seed):
        r = np.random.default_rng(seed)
        mu = r.standard_normal(5) * 3
        sigma = r.random(5) * 3 + 1e-3
        val = float(kl_to_standard_normal(GaussianLatent(mu, sigma)))
        assert val >= 0.0
        if val == 0.0:
            assert np.allclose(mu, 0) and np.allclose(sigma, 1)

    def test_zero_only_at_standard_normal(self):
        # 1000 random valid inputs never hit exactly zero
        for seed in range(1000):
            r = np.random.default_rng(seed)
            mu = r.standard_normal(3)
            sigma = r.random(3) + 0.01
            if np.allclose(mu, 0) and np.allclose(sigma, 1):
                continue
            assert float(kl_to_standard_normal(GaussianLatent(mu, sigma))) > 0


class TestNuisanceLogLikelihood:
    def test_mode_at_origin(self):
        assert nuisance_log_likelihood(np.zeros(8)) == 0.0

    def test_direct_value(self):
        assert nuisance_log_likelihood(np.ones(4)) == -2.0

    def test_monotone_in_norm(self):
        assert nuisance_log_likelihood(np.array([3.0])) < nuisance_log_likelihood(np.array([2.0]))

    def test_permutation_invariance(self):
        z = rng.standard_normal(10)
        perm = rng.permutation(10)
        assert nuisance_log_likelihood(z) == pytest.approx(
            nuisance_log_likelihood(z[perm]), rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            nuisance_log_likelihood(np.zeros(0))
