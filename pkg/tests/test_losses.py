import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aenib.autodiff import Tensor, grad_check
from aenib.losses import (LossReport, LossWeights, adversarial_similarity_losses,
                          cross_entropy, d2_squared, ind_losses,
                          nuis_discriminator_loss, nuis_encoder_loss, recon_nmse,
                          ssim, total_aenib)

rng = np.random.default_rng(99)


def ssim_direct_oracle(x, y, window=8):
    """Independent direct-loop implementation of the windowed similarity,
    written against the formula before the vectorized path."""
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    vals = []
    h, w = x.shape
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            px = x[i:i + window, j:j + window].ravel()
            py = y[i:i + window, j:j + window].ravel()
            mx, my = px.mean(), py.mean()
            vx, vy = px.var(), py.var()
            cov = ((px - mx) * (py - my)).mean()
            s1 = (2 * mx * my + c1) / (mx ** 2 + my ** 2 + c1)
            s2 = (2 * cov + c2) / (vx + vy + c2)
            vals.append(s1 * s2)
    return float(np.mean(vals))


class TestReconNMSE:
    def test_perfect_reconstruction(self):
        x = rng.random((3, 5, 5, 1))
        assert float(recon_nmse(x, x)) == 0.0

    def test_half_and_zero(self):
        x = np.array([[3.0, 4.0]])
        assert float(recon_nmse(x, x / 2)) == pytest.approx(0.25)
        assert float(recon_nmse(x, np.zeros_like(x))) == pytest.approx(1.0)

    def test_scale_invariance(self):
        x = rng.random((2, 4, 4, 1)) + 0.1
        xh = rng.random((2, 4, 4, 1))
        for c in (3.0, -0.5, 100.0):
            assert float(recon_nmse(c * x, c * xh)) == pytest.approx(
                float(recon_nmse(x, xh)), rel=1e-5)

    def test_zero_input_guarded(self):
        x = np.zeros((1, 2, 2, 1))
        val = float(recon_nmse(x, np.ones_like(x)))
        assert np.isfinite(val) and val > 0  # guard kicks in instead of dividing by 0

    def test_gradient(self):
        err = grad_check(lambda a, b: recon_nmse(a, b),
                         [rng.random((2, 3, 3, 1)) + 0.2, rng.random((2, 3, 3, 1))])
        assert err < 1e-4


class TestSSIM:
    def test_identity_and_symmetry(self):
        for _ in range(5):
            x = rng.random((10, 10))
            y = rng.random((10, 10))
            assert float(ssim(x, x)) == pytest.approx(1.0, abs=1e-9)
            assert float(ssim(x, y)) == pytest.approx(float(ssim(y, x)), rel=1e-9)

    def test_identity_on_100_random_images(self):
        for seed in range(100):
            x = np.random.default_rng(seed).random((9, 9))
            assert float(ssim(x, x)) == pytest.approx(1.0, abs=1e-8)
            assert float(d2_squared(x, x)) == pytest.approx(0.0, abs=1e-8)

    def test_matches_direct_oracle(self):
        r = np.random.default_rng(3)
        a = r.random((8, 8))
        b = np.clip(a + 0.3 * r.standard_normal((8, 8)), 0, 1)
        assert float(ssim(a, b)) == pytest.approx(ssim_direct_oracle(a, b), rel=1e-8)
        c = r.random((12, 12))
        d = c * 0.5 + 0.2
        assert float(ssim(c, d)) == pytest.approx(ssim_direct_oracle(c, d), rel=1e-8)

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            ssim(np.ones((4, 4)), np.ones((4, 4)), window=8)

    def test_gradient(self):
        err = grad_check(lambda a, b: ssim(a, b, window=3),
                         [rng.random((5, 5)) + 0.1, rng.random((5, 5)) + 0.1])
        assert err < 1e-4


class TestD2Squared:
    def test_zero_iff_identical_and_symmetry(self):
        x, y = rng.random((9, 9)), rng.random((9, 9))
        assert float(d2_squared(x, x)) == pytest.approx(0.0, abs=1e-9)
        assert float(d2_squared(x, y)) == pytest.approx(float(d2_squared(y, x)), rel=1e-9)

    def test_composition_of_oracle_outputs(self):
        r = np.random.default_rng(11)
        x, y = r.random((8, 8)), r.random((8, 8))
        # 2 - S1 - S2 window means, from the same components as the similarity
        from aenib.losses import _ssim_components
        s1, s2 = _ssim_components(Tensor(x), Tensor(y), 8)
        assert float(d2_squared(x, y)) == pytest.approx(
            2 - float(s1.mean()) - float(s2.mean()), rel=1e-9)

    def test_range(self):
        for _ in range(20):
            x, y = rng.random((9, 9)), rng.random((9, 9))
            assert 0.0 <= float(d2_squared(x, y)) <= 4.0

    def test_gradient(self):
        err = grad_check(lambda a, b: d2_squared(a, b, window=3),
                         [rng.random((5, 5)) + 0.1, rng.random((5, 5)) + 0.1])
        assert err < 1e-4


class TestNuisanceLosses:
    def test_discriminator_correct_onehot(self):
        probs = np.full((2, 10), 1e-13)
        probs[:, 3] = 1.0 - 9e-13
        assert float(nuis_discriminator_loss(probs, np.array([3, 3]))) == pytest.approx(
            0.0, abs=1e-9)

    def test_discriminator_uniform(self):
        probs = np.full((4, 10), 0.1)
        assert float(nuis_discriminator_loss(probs, np.zeros(4, int))) == pytest.approx(
            np.log(10), rel=1e-6)

    def test_discriminator_wrong_onehot_hits_clamp(self):
        probs = np.full((1, 10), 1e-13)
        probs[:, 1] = 1.0 - 9e-13
        val = float(nuis_discriminator_loss(probs, np.array([0])))
        assert val == pytest.approx(-np.log(1e-12), rel=1e-6)

    def test_encoder_uniform_is_minimum(self):
        assert float(nuis_encoder_loss(np.full((3, 10), 0.1))) == pytest.approx(
            np.log(10), rel=1e-9)

    def test_encoder_example_value(self):
        # independently computed: -(1/10)(ln 0.5 + 9 ln(0.5/9)) = 2.67065
        q = np.array([[0.5] + [0.5 / 9] * 9])
        assert float(nuis_encoder_loss(q)) == pytest.approx(2.6706493001625433, rel=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_encoder_lower_bound_ln_k(self, seed):
        r = np.random.default_rng(seed)
        q = r.random((1, 10)) + 1e-3
        q /= q.sum()
        val = float(nuis_encoder_loss(q))
        assert val >= np.log(10) - 1e-9
        if not np.allclose(q, 0.1):
            assert val > np.log(10)

    def test_malformed_distribution_rejected(self):
        with pytest.raises(ValueError):
            nuis_encoder_loss(np.array([[0.5, 0.4]]))

    def test_gradient(self):
        logits = rng.standard_normal((3, 5))

        def fn(t):
            return nuis_encoder_loss(t.softmax(axis=-1))

        assert grad_check(fn, [logits]) < 1e-4


class TestIndLosses:
    def test_balanced_discriminator(self):
        d = np.full(4, 0.5)
        disc, enc = ind_losses(d, d)
        assert float(disc) == pytest.approx(2 * np.log(2), rel=1e-9)
        assert float(enc) == pytest.approx(np.log(0.5), rel=1e-9)

    def test_perfect_discriminator(self):
        disc, _ = ind_losses(np.full(4, 1 - 1e-13), np.full(4, 1e-13))
        assert float(disc) == pytest.approx(0.0, abs=1e-6)

    def test_monotone_in_fake_score(self):
        vals = [float(ind_losses(np.array([0.5]), np.array([t]))[1])
                for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            ind_losses(np.array([1.0]), np.array([0.5]))
        with pytest.raises(ValueError):
            ind_losses(np.array([0.5]), np.array([0.0]))

    def test_gradient(self):
        def fn(a, b):
            return ind_losses(a.sigmoid(), b.sigmoid())[0]
        assert grad_check(fn, [rng.standard_normal(4), rng.standard_normal(4)]) < 1e-4


class TestVibLoss:
    def test_perfect_prediction_vanishes(self):
        from aenib.latent import GaussianLatent
        from aenib.losses import vib_loss
        probs = np.full((2, 10), 1e-13)
        probs[:, 0] = 1.0 - 9e-13
        latent = GaussianLatent(np.zeros((2, 4)), np.ones((2, 4)))
        assert float(vib_loss(probs, np.zeros(2, int), latent, 1.0)) == pytest.approx(
            0.0, abs=1e-9)

    def test_uniform_with_zero_kl(self):
        from aenib.latent import GaussianLatent
        from aenib.losses import vib_loss
        probs = np.full((2, 10), 0.1)
        latent = GaussianLatent(np.zeros((2, 4)), np.ones((2, 4)))
        for beta in (0.0, 0.1, 10.0):
            assert float(vib_loss(probs, np.zeros(2, int), latent, beta)) == pytest.approx(
                np.log(10), rel=1e-6)

    def test_linear_in_beta(self):
        from aenib.latent import GaussianLatent, kl_to_standard_normal
        from aenib.losses import vib_loss
        probs = np.full((2, 10), 0.1)
        latent = GaussianLatent(rng.standard_normal((2, 4)), rng.random((2, 4)) + 0.5)
        kl = float(kl_to_standard_normal(latent).mean())
        base = float(vib_loss(probs, np.zeros(2, int), latent, 0.2))
        doubled = float(vib_loss(probs, np.zeros(2, int), latent, 0.4))
        assert doubled - base == pytest.approx(0.2 * kl, rel=1e-5)


class TestAdversarialSimilarity:
    def test_identical_embeddings(self):
        emb = np.array([[1.0, 2.0, 3.0]])
        _, gen = adversarial_similarity_losses(emb, emb, lambda t: t, 0.2)
        sig5 = 1 / (1 + np.exp(-5.0))
        assert float(gen) == pytest.approx(np.log(1 - sig5), rel=1e-6)

    def test_orthogonal_embeddings(self):
        _, gen = adversarial_similarity_losses(np.array([[1.0, 0.0]]),
                                               np.array([[0.0, 1.0]]), lambda t: t, 0.2)
        assert float(gen) == pytest.approx(np.log(0.5), rel=1e-9)

    def test_scale_invariance_of_cosine(self):
        a, b = rng.standard_normal((2, 6)), rng.standard_normal((2, 6))
        _, g1 = adversarial_similarity_losses(a, b, lambda t: t, 0.2)
        _, g2 = adversarial_similarity_losses(3.7 * a, 0.2 * b, lambda t: t, 0.2)
        assert float(g1) == pytest.approx(float(g2), rel=1e-5)

    def test_disc_is_negated_gen(self):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        disc, gen = adversarial_similarity_losses(a, b, lambda t: t, 0.2)
        assert float(disc) == pytest.approx(-float(gen), rel=1e-9)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            adversarial_similarity_losses(np.zeros((1, 3)), np.ones((1, 3)),
                                          lambda t: t, 0.2)

    def test_gradient(self):
        def fn(a, b):
            return adversarial_similarity_losses(a, b, lambda t: t, 0.2)[1]
        assert grad_check(fn, [rng.standard_normal((2, 4)) + 2.0,
                               rng.standard_normal((2, 4)) + 2.0]) < 1e-4


class TestTotalComposition:
    def test_all_zero(self):
        rep = total_aenib(dict(vib=0.0, recon=0.0, nuis=0.0, ind=0.0), LossWeights())
        assert rep.total == 0.0

    def test_arithmetic(self):
        rep = total_aenib(dict(vib=1.0, recon=2.0, nuis=3.0, ind=4.0),
                          LossWeights(alpha=10.0))
        assert rep.total == 28.0

    def test_recon_kind_changes_only_field_semantics(self):
        parts = dict(vib=1.0, recon=2.0, nuis=3.0, ind=4.0)
        a = total_aenib(parts, LossWeights(recon_kind="nmse"))
        b = total_aenib(parts, LossWeights(recon_kind="d2sq"))
        assert a.total == b.total

    def test_missing_mandatory_term(self):
        with pytest.raises(ValueError):
            total_aenib(dict(vib=1.0, recon=2.0, nuis=3.0), LossWeights())

    def test_decomposition_reproduces_exactly(self):
        r = np.random.default_rng(0)
        for _ in range(50):
            parts = dict(vib=r.random(), recon=r.random(), nuis=r.random(),
                         ind=r.random(), sim=r.random(), vq=r.random())
            w = LossWeights(alpha=float(r.random() * 20))
            rep = total_aenib(parts, w)
            recomputed = LossReport.compose_total(rep.vib, rep.recon, rep.nuis,
                                                  rep.ind, w.alpha, rep.sim, rep.vq)
            assert recomputed == rep.total  # bit-identical at fixed order

    def test_fields_echo_inputs(self):
        rep = total_aenib(dict(vib=1.5, recon=0.25, nuis=2.0, ind=-0.5), LossWeights())
        assert (rep.vib, rep.recon, rep.nuis, rep.ind) == (1.5, 0.25, 2.0, -0.5)
        assert rep.sim is None and rep.vq is None


def test_cross_entropy_with_probability_clamp():
    probs = np.array([[0.7, 0.2, 0.1]])
    assert float(cross_entropy(probs, np.array([0]))) == pytest.approx(-np.log(0.7))
