import numpy as np
import pytest

from aenib.autodiff import Tensor, grad_check, no_grad
from aenib.latent import LatentPair
from aenib.models import (Codebook, ConvAENIB, DecoderSpec, EncoderSpec,
                          ViTAENIB, build_model, project_feature_stats,
                          vq_quantize)

rng = np.random.default_rng(5)


def small_conv_model(seed=0, **kw):
    spec = EncoderSpec(family="small-conv", **kw)
    return build_model(spec, DecoderSpec(), np.random.default_rng(seed))


def small_vit_model(seed=0, input_hw=28, **kw):
    spec = EncoderSpec(family="small-transformer", input_hw=input_hw, depth=2,
                       embed_dim=64, heads=4, **kw)
    return build_model(spec, DecoderSpec(depth=1), np.random.default_rng(seed))


class TestFeatureStats:
    def test_constant_map(self):
        fs = project_feature_stats([np.full((2, 2, 1), 3.0)])
        m, s = fs.to_arrays()[0]
        assert m.squeeze() == pytest.approx(3.0)
        assert s.squeeze() == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed_moments(self):
        fm = np.array([[0.0, 2.0], [0.0, 2.0]]).reshape(2, 2, 1)
        m, s = project_feature_stats([fm]).to_arrays()[0]
        assert m.squeeze() == pytest.approx(1.0)
        assert s.squeeze() == pytest.approx(1.0)  # biased second central moment

    def test_spatial_permutation_invariance(self):
        fm = rng.random((4, 4, 3))
        flat = fm.reshape(16, 3)[rng.permutation(16)].reshape(4, 4, 3)
        a = project_feature_stats([fm]).to_arrays()[0]
        b = project_feature_stats([flat]).to_arrays()[0]
        assert np.allclose(a[0], b[0]) and np.allclose(a[1], b[1], atol=1e-12)

    def test_channel_permutation_equivariance(self):
        fm = rng.random((4, 4, 3))
        perm = np.array([2, 0, 1])
        a = project_feature_stats([fm]).to_arrays()[0]
        b = project_feature_stats([fm[:, :, perm]]).to_arrays()[0]
        assert np.allclose(a[0][..., perm], b[0])
        assert np.allclose(a[1][..., perm], b[1])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            project_feature_stats([np.zeros((0, 2, 1))])

    def test_layer_count_and_flat_dim(self):
        maps = [rng.random((6, 6, 2)), rng.random((3, 3, 4))]
        fs = project_feature_stats(maps)
        assert fs.num_layers == 2
        assert fs.flat().shape[-1] == 2 * (2 + 4)


class TestVQ:
    def test_exact_codeword_gives_zero_loss(self):
        cb = Codebook(4, 3, np.random.default_rng(0))
        target = cb.embeddings.data[3].copy()
        codes, quant, loss = vq_quantize(np.array([target]), cb)
        assert codes[0] == 3
        assert float(loss) == pytest.approx(0.0, abs=1e-10)
        assert np.allclose(quant.data[0], target)

    def test_brute_force_nearest_neighbor(self):
        cb = Codebook(2, 1, np.random.default_rng(0))
        cb.embeddings.data[:] = np.array([[-1.0], [1.0]])
        codes, quant, _ = vq_quantize(np.array([[0.2]]), cb)
        assert codes[0] == 1
        assert quant.data[0, 0] == pytest.approx(1.0)

    def test_tie_breaks_to_lowest_index(self):
        cb = Codebook(3, 1, np.random.default_rng(0))
        cb.embeddings.data[:] = np.array([[-1.0], [1.0], [-1.0]])
        codes, _, _ = vq_quantize(np.array([[0.0]]), cb)
        assert codes[0] == 0

    def test_brute_force_on_random_batches(self):
        cb = Codebook(16, 4, np.random.default_rng(1))
        z = rng.standard_normal((10, 4))
        codes, quant, _ = vq_quantize(z, cb)
        e = cb.embeddings.data.astype(np.float64)
        for i in range(10):
            d = ((z[i] - e) ** 2).sum(axis=1)
            assert codes[i] == int(np.argmin(d))
            assert np.allclose(quant.data[i], e[codes[i]])

    def test_emitted_vectors_are_codebook_rows(self):
        cb = Codebook(8, 4, np.random.default_rng(2))
        z = rng.standard_normal((3, 5, 4))
        codes, quant, _ = vq_quantize(z, cb)
        rows = {tuple(r) for r in cb.embeddings.data}
        for vec in quant.data.reshape(-1, 4):
            assert tuple(vec) in rows

    def test_straight_through_identity_gradient(self):
        cb = Codebook(8, 4, np.random.default_rng(3))
        z = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        _, quant, _ = vq_quantize(z, cb)
        downstream = rng.standard_normal((5, 4))
        (quant * Tensor(downstream)).sum().backward()
        assert np.allclose(z.grad, downstream)  # identity Jacobian

    def test_vq_loss_trains_codebook_and_encoder(self):
        cb = Codebook(4, 3, np.random.default_rng(4))
        z = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
        _, _, loss = vq_quantize(z, cb)
        loss.backward()
        assert cb.embeddings.grad is not None
        assert z.grad is not None

    def test_commit_weight_scales_encoder_term(self):
        z = np.array([[0.3, 0.0]])
        cb1 = Codebook(2, 2, np.random.default_rng(5), beta_commit=0.25)
        cb2 = Codebook(2, 2, np.random.default_rng(5), beta_commit=0.5)
        cb1.embeddings.data[:] = cb2.embeddings.data[:] = np.array([[1.0, 0], [0, 1.0]])
        _, _, l1 = vq_quantize(z, cb1)
        _, _, l2 = vq_quantize(z, cb2)
        d2 = ((z[0] - [1.0, 0]) ** 2).sum()
        assert float(l1) == pytest.approx(d2 * 1.25, rel=1e-5)
        assert float(l2) == pytest.approx(d2 * 1.5, rel=1e-5)

    def test_renormalize_unit_rows(self):
        cb = Codebook(8, 4, np.random.default_rng(6))
        cb.embeddings.data *= rng.random((8, 1)) * 5 + 0.1
        cb.renormalize()
        norms = np.linalg.norm(cb.embeddings.data, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-6

    def test_empty_codebook_rejected(self):
        with pytest.raises(ValueError):
            Codebook(0, 4, np.random.default_rng(0))

    def test_dim_mismatch(self):
        cb = Codebook(4, 3, np.random.default_rng(0))
        with pytest.raises(ValueError):
            vq_quantize(np.zeros((2, 5)), cb)


class TestConvModel:
    def test_deterministic_encode(self):
        model = small_conv_model().eval()
        x = rng.random((2, 28, 28, 1)).astype(np.float32)
        with no_grad():
            a = model.encode(Tensor(x))
            b = model.encode(Tensor(x))
        assert np.array_equal(a.pair.z.data, b.pair.z.data)
        assert np.array_equal(a.pair.z_n.data, b.pair.z_n.data)

    def test_default_latent_shapes(self):
        model = small_conv_model().eval()
        with no_grad():
            res = model.encode(Tensor(rng.random((3, 28, 28, 1)).astype(np.float32)))
        assert res.pair.z.shape == (3, 32)
        assert res.pair.z_n.shape == (3, 128)   # default nuisance dimension
        assert res.vq_loss is None
        assert res.stats.num_layers == 4

    def test_resolution_mismatch(self):
        model = small_conv_model().eval()
        with pytest.raises(ValueError):
            model.encode(Tensor(rng.random((1, 32, 32, 1)).astype(np.float32)))

    def test_decode_shape_and_determinism(self):
        model = small_conv_model().eval()
        x = rng.random((2, 28, 28, 1)).astype(np.float32)
        with no_grad():
            res = model.encode(Tensor(x))
            img1 = model.decode(res.pair)
            img2 = model.decode(res.pair)
        assert img1.shape == x.shape
        assert np.array_equal(img1.data, img2.data)
        assert img1.data.min() >= 0.0 and img1.data.max() <= 1.0

    def test_decode_dimension_mismatch(self):
        model = small_conv_model().eval()
        bad = LatentPair(z=Tensor(np.zeros((1, 32), dtype=np.float32)),
                         z_n=Tensor(np.zeros((1, 64), dtype=np.float32)))
        with pytest.raises(ValueError):
            model.decode(bad)

    def test_sigma_strictly_positive(self):
        model = small_conv_model().eval()
        with no_grad():
            res = model.encode(Tensor(rng.random((2, 28, 28, 1)).astype(np.float32)))
        assert np.all(res.z_head.sigma.data > 0)
        assert np.all(res.zn_head.sigma.data > 0)

    def test_parameter_groups_disjoint_and_complete(self):
        model = small_conv_model()
        trunk = set(model.trunk_parameters())
        gen = set(model.generator_adam_parameters())
        disc = set(model.discriminator_parameters())
        assert not (trunk & gen) and not (trunk & disc) and not (gen & disc)
        assert trunk | gen | disc == set(model.named_parameters())


class TestViTModel:
    def test_vq_code_grid(self):
        # 32x32 input with patch 4 -> 8x8 grid -> 64 codes below 256
        model = small_vit_model(input_hw=32).eval()
        with no_grad():
            res = model.encode(Tensor(rng.random((2, 32, 32, 1)).astype(np.float32)))
        assert res.pair.codes.shape == (2, 64)
        assert res.pair.codes.max() < 256
        assert res.pair.quantized.shape == (2, 64, 32)
        assert res.vq_loss is not None
        assert res.stats is None

    def test_round_trip_shapes(self):
        model = small_vit_model().eval()
        x = rng.random((2, 28, 28, 1)).astype(np.float32)
        with no_grad():
            res = model.encode(Tensor(x))
            out = model.decode(res.pair)
        assert out.shape == x.shape

    def test_deterministic(self):
        model = small_vit_model().eval()
        x = rng.random((1, 28, 28, 1)).astype(np.float32)
        with no_grad():
            a = model.encode(Tensor(x))
            b = model.encode(Tensor(x))
        assert np.array_equal(a.pair.codes, b.pair.codes)
        assert np.array_equal(a.pair.z.data, b.pair.z.data)

    def test_parameter_groups_disjoint_and_complete(self):
        model = small_vit_model()
        trunk = set(model.trunk_parameters())
        gen = set(model.generator_adam_parameters())
        disc = set(model.discriminator_parameters())
        assert not (trunk & gen) and not (trunk & disc) and not (gen & disc)
        assert trunk | gen | disc == set(model.named_parameters())


def test_spec_validation():
    with pytest.raises(ValueError):
        EncoderSpec(family="resnet-152")
    with pytest.raises(ValueError):
        EncoderSpec(family="small-transformer", input_hw=30, patch=4)
    with pytest.raises(ValueError):
        DecoderSpec(base_hw=5).validate_against(EncoderSpec())


def test_trunk_gradients_flow_float64():
    # a tiny float64 twin of the conv model passes a finite-difference check
    spec = EncoderSpec(conv_channels=(2, 3, 4, 4), input_hw=8, k=3, k_n=4,
                       mlp_hidden=8, sim_hidden=8, sim_embed_dim=4, dtype="float64")
    model = ConvAENIB(spec, DecoderSpec(conv_channels=(3, 2), base_hw=2),
                      np.random.default_rng(0))
    model.eval()  # freeze BN statistics so the loss is a pure function
    x = rng.random((2, 8, 8, 1))
    names = list(model.named_parameters())[:4]

    def loss_of():
        res = model.encode(Tensor(x))
        recon = model.decode(res.pair)
        return ((recon - Tensor(x)) ** 2).sum() + (res.pair.z ** 2).sum()

    loss = loss_of()
    loss.backward()
    for name in names:
        p = model.named_parameters()[name]
        if p.grad is None:
            continue
        g = p.grad.copy()
        flat = p.data.reshape(-1)
        idx = int(rng.integers(flat.size))
        eps = 1e-6
        orig = flat[idx]
        flat[idx] = orig + eps
        hi = float(loss_of().data)
        flat[idx] = orig - eps
        lo = float(loss_of().data)
        flat[idx] = orig
        num = (hi - lo) / (2 * eps)
        ana = g.reshape(-1)[idx]
        assert abs(ana - num) / max(1.0, abs(ana), abs(num)) < 1e-4, name
