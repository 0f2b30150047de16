"""Encoder/decoder architectures at small scale.

Two families:
  * small-conv: a 4-stage convolutional trunk whose tapped feature maps feed
    the feature-statistics projection; MLP heads on the projection emit
    Gaussian (mu, log sigma) parameters for both the semantic latent z and the
    dense nuisance z_n. The decoder is an upsampling conv stack whose
    normalization affines are modulated by the latents (AdaIN).
  * small-transformer: a tiny ViT whose output tokens are split into a pooled
    semantic slice (Gaussian head for z) and a per-patch nuisance slice that is
    vector-quantized against a learned, L2-normalized codebook.

Inputs are NHWC in [0, 1]; standardization happens inside the model using the
statistics stored in the spec, and decoders emit back into [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, concat, no_grad
from .latent import GaussianLatent, LatentPair, reparam_sample
from .nn import (MLP, BatchNorm2d, Conv2d, LayerNorm, Linear, Module,
                 Parameter, SpectralMLP, TransformerBlock, conv2d,
                 normalize_axes, patchify, spatial_moments, unpatchify,
                 upsample2x)

__all__ = [
    "FeatureStats", "project_feature_stats", "Codebook", "vq_quantize",
    "EncoderSpec", "DecoderSpec", "EncodeResult", "ConvAENIB", "ViTAENIB",
    "build_model",
]


# ---------------------------------------------------------------------------
# feature-statistics projection

@dataclass
class FeatureStats:
    """Per-layer channelwise spatial mean m and variance s of tapped feature maps."""

    layers: list[tuple[Tensor, Tensor]]

    def __post_init__(self):
        for m, s in self.layers:
            if np.any(np.asarray(s.data if isinstance(s, Tensor) else s) < -1e-6):
                raise ValueError("spatial variances must be nonnegative")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def flat(self) -> Tensor:
        """Concatenate all (m, s) pairs into a single per-sample vector."""
        parts = []
        for m, s in self.layers:
            parts.extend([m, s])
        return concat(parts, axis=-1)

    def to_arrays(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(np.asarray(m.data if isinstance(m, Tensor) else m),
                 np.asarray(s.data if isinstance(s, Tensor) else s)) for m, s in self.layers]


def project_feature_stats(feature_maps) -> FeatureStats:
    """Channelwise spatial mean and variance of each tapped feature map.

    Maps are (H, W, C) or batched (B, H, W, C); the spatial axes are reduced
    with the biased (1/HW) second central moment.
    """
    layers = []
    for fm in feature_maps:
        fm = as_tensor(fm)
        if fm.ndim == 3:
            fm = fm.reshape(1, *fm.shape)
        if fm.ndim != 4 or fm.size == 0:
            raise ValueError("feature maps must be nonempty (H, W, C) or (B, H, W, C) arrays")
        mo = spatial_moments(fm)
        layers.append((mo[:, 0], mo[:, 1]))
    return FeatureStats(layers)


# ---------------------------------------------------------------------------
# vector quantization

class Codebook(Module):
    """Learned dictionary of L2-normalized codewords with a commitment weight."""

    def __init__(self, m: int, d: int, rng: np.random.Generator,
                 beta_commit: float = 0.25, dtype=np.float32):
        super().__init__()
        if m < 1:
            raise ValueError("codebook must contain at least one codeword")
        if beta_commit < 0:
            raise ValueError("commitment weight must be nonnegative")
        e = rng.standard_normal((m, d)).astype(dtype)
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        self.embeddings = Parameter(e)
        self.beta_commit = beta_commit

    @property
    def num_codes(self) -> int:
        return self.embeddings.shape[0]

    @property
    def code_dim(self) -> int:
        return self.embeddings.shape[1]

    def renormalize(self):
        """Project every codeword back to the unit sphere (called after updates)."""
        e = self.embeddings.data
        e /= np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)


def vq_quantize(z_hat, codebook: Codebook):
    """Nearest-codeword quantization with a straight-through gradient.

    Returns (codes, quantized, vq_loss). Each input vector maps to its nearest
    codeword in Euclidean distance (ties break to the lowest index); the
    forward output is the codeword while the gradient passes to `z_hat`
    unchanged. vq_loss = ||sg[z_hat] - e||^2 + beta ||z_hat - sg[e]||^2,
    averaged over vectors.
    """
    z_hat = as_tensor(z_hat)
    if codebook.num_codes == 0:
        raise ValueError("empty codebook")
    d = codebook.code_dim
    if z_hat.shape[-1] != d:
        raise ValueError(f"vector dim {z_hat.shape[-1]} != codeword dim {d}")
    flat = z_hat.reshape(-1, d)
    e = codebook.embeddings
    d2 = (np.sum(flat.data.astype(np.float64) ** 2, axis=1, keepdims=True)
          - 2.0 * flat.data.astype(np.float64) @ e.data.astype(np.float64).T
          + np.sum(e.data.astype(np.float64) ** 2, axis=1))
    codes = np.argmin(d2, axis=1)
    picked = e.take_rows(codes)                      # grads flow to the codebook
    # straight-through: the forward value IS the codeword row (exact membership),
    # while the gradient passes to z_hat with an identity Jacobian
    st_data = picked.data.astype(flat.dtype, copy=True)

    def st_backward(g):
        flat._accumulate(g)

    quant_flat = Tensor._make(st_data, (flat,), st_backward)
    codebook_term = ((picked - flat.detach()) ** 2).sum(axis=-1).mean()
    commit_term = ((flat - picked.detach()) ** 2).sum(axis=-1).mean()
    vq_loss = codebook_term + codebook.beta_commit * commit_term
    quantized = quant_flat.reshape(*z_hat.shape)
    codes = codes.reshape(z_hat.shape[:-1])
    return codes, quantized, vq_loss


# ---------------------------------------------------------------------------
# model specs

@dataclass
class EncoderSpec:
    family: str = "small-conv"          # "small-conv" | "small-transformer"
    input_hw: int = 28
    in_channels: int = 1
    n_classes: int = 10
    k: int = 32                          # semantic dim K
    k_n: int = 128                       # dense nuisance dim (conv path)
    conv_channels: tuple = (16, 32, 64, 96)
    conv_strides: tuple = (2, 2, 2, 1)
    taps: tuple = (0, 1, 2, 3)           # conv stages feeding the projection
    mlp_hidden: int = 1024
    sim_hidden: int = 256
    sim_embed_dim: int = 128
    # transformer path
    patch: int = 4
    embed_dim: int = 64
    depth: int = 3
    heads: int = 4
    sem_slice: int = 32                  # token dims pooled for z
    vq_dim: int = 32                     # per-patch nuisance dims
    vq_codes: int = 256
    vq_beta: float = 0.25
    # input standardization (per-channel)
    norm_mean: tuple = (0.0,)
    norm_std: tuple = (1.0,)
    dtype: str = "float32"

    def __post_init__(self):
        if self.family not in ("small-conv", "small-transformer"):
            raise ValueError(f"unknown encoder family: {self.family!r}")
        if self.family == "small-transformer" and self.input_hw % self.patch:
            raise ValueError("input size must be divisible by the patch size")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype).type

    @property
    def is_vq(self) -> bool:
        return self.family == "small-transformer"

    @property
    def nuisance_payload_dim(self) -> int:
        if self.family == "small-conv":
            return self.k_n
        return (self.input_hw // self.patch) ** 2 * self.vq_dim

    @property
    def grid(self) -> int:
        return self.input_hw // self.patch


@dataclass
class DecoderSpec:
    conv_channels: tuple = (32, 16)
    base_hw: int = 7
    depth: int = 2                       # transformer decoder blocks

    def validate_against(self, enc: EncoderSpec):
        if enc.family == "small-conv":
            if self.base_hw * 2 ** len(self.conv_channels) != enc.input_hw:
                raise ValueError("decoder upsampling chain must end at the input resolution")


@dataclass
class EncodeResult:
    pair: LatentPair
    z_head: GaussianLatent
    zn_head: GaussianLatent | None
    stats: FeatureStats | None
    vq_loss: Tensor | None


# ---------------------------------------------------------------------------
# conv family

class _AdaINBlock(Module):
    """Conv -> instance norm -> latent-modulated affine -> ReLU."""

    def __init__(self, c_in: int, c_out: int, latent_dim: int,
                 rng: np.random.Generator, dtype):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, 3, 1, 1, rng, dtype)
        self.affine = Linear(latent_dim, 2 * c_out, rng, dtype, init="xavier")
        self.c_out = c_out

    def __call__(self, h: Tensor, latent: Tensor) -> Tensor:
        h = self.conv(h)
        h, _, _ = normalize_axes(h, (1, 2))
        ab = self.affine(latent)
        gamma = ab[:, :self.c_out].reshape(-1, 1, 1, self.c_out)
        beta = ab[:, self.c_out:].reshape(-1, 1, 1, self.c_out)
        return (h * (1.0 + gamma) + beta).relu()


class ConvDecoder(Module):
    def __init__(self, enc: EncoderSpec, dec: DecoderSpec, rng, dtype):
        super().__init__()
        latent_dim = enc.k + enc.nuisance_payload_dim
        ch = dec.conv_channels
        self.base_hw = dec.base_hw
        self.c0 = ch[0]
        self.fc = Linear(latent_dim, dec.base_hw * dec.base_hw * ch[0], rng, dtype)
        self.n_blocks = len(ch)
        for i in range(self.n_blocks):
            c_in = ch[i - 1] if i else ch[0]
            setattr(self, f"block{i}", _AdaINBlock(c_in, ch[i], latent_dim, rng, dtype))
        self.out_conv = Conv2d(ch[-1], enc.in_channels, 3, 1, 1, rng, dtype)

    def __call__(self, latent: Tensor) -> Tensor:
        h = self.fc(latent).relu().reshape(-1, self.base_hw, self.base_hw, self.c0)
        for i in range(self.n_blocks):
            if i:
                h = upsample2x(h)
            h = getattr(self, f"block{i}")(h, latent)
        h = upsample2x(h)
        return self.out_conv(h).sigmoid()


class ConvAENIB(Module):
    """Conv-family model: trunk + projection heads + decoder + discriminators."""

    def __init__(self, enc_spec: EncoderSpec, dec_spec: DecoderSpec,
                 rng: np.random.Generator):
        super().__init__()
        dec_spec.validate_against(enc_spec)
        self.spec = enc_spec
        self.dec_spec = dec_spec
        dtype = enc_spec.np_dtype
        ch = enc_spec.conv_channels
        strides = enc_spec.conv_strides
        c_prev = enc_spec.in_channels
        for i, (c, s) in enumerate(zip(ch, strides)):
            setattr(self, f"conv{i}", Conv2d(c_prev, c, 3, s, 1, rng, dtype))
            setattr(self, f"bn{i}", BatchNorm2d(c, dtype))
            c_prev = c
        self.pi_dim = 2 * sum(ch[i] for i in enc_spec.taps)
        hid = enc_spec.mlp_hidden
        self.head_z = MLP([self.pi_dim, hid, 2 * enc_spec.k], rng, dtype)
        self.head_zn = MLP([self.pi_dim, hid, 2 * enc_spec.k_n], rng, dtype)
        self.classifier = Linear(enc_spec.k, enc_spec.n_classes, rng, dtype, init="xavier")
        self.decoder = ConvDecoder(enc_spec, dec_spec, rng, dtype)
        # adversarial parts
        self.q_n = MLP([enc_spec.k_n, hid, enc_spec.n_classes], rng, dtype)
        self.d_z = SpectralMLP([enc_spec.k + enc_spec.k_n, hid, 1], rng, dtype)
        self.d_x = MLP([self.pi_dim, enc_spec.sim_hidden, enc_spec.sim_embed_dim], rng, dtype)

    # -- parameter groups (generator phase vs discriminator phase) -----------

    def _named(self, modules: dict[str, Module]) -> dict[str, Tensor]:
        out = {}
        for name, mod in modules.items():
            out.update(mod.named_parameters(name + "."))
        return out

    def trunk_parameters(self) -> dict[str, Tensor]:
        """Conv trunk, trained with the encoder optimizer (momentum SGD)."""
        mods = {f"conv{i}": getattr(self, f"conv{i}") for i in range(len(self.spec.conv_channels))}
        mods.update({f"bn{i}": getattr(self, f"bn{i}") for i in range(len(self.spec.conv_channels))})
        return self._named(mods)

    def generator_adam_parameters(self) -> dict[str, Tensor]:
        """Projection heads, classifier, and decoder: the non-trunk generator
        parts, trained GAN-style with the adversarial optimizer."""
        return self._named({"head_z": self.head_z, "head_zn": self.head_zn,
                            "classifier": self.classifier, "decoder": self.decoder})

    def discriminator_parameters(self) -> dict[str, Tensor]:
        return self._named({"q_n": self.q_n, "d_z": self.d_z, "d_x": self.d_x})

    # -- forward pieces -------------------------------------------------------

    def _standardize(self, x: Tensor) -> Tensor:
        mean = np.asarray(self.spec.norm_mean, dtype=self.spec.np_dtype)
        std = np.asarray(self.spec.norm_std, dtype=self.spec.np_dtype)
        return (x - mean) / std

    def trunk_stats(self, x) -> FeatureStats:
        x = as_tensor(x)
        if x.shape[1] != self.spec.input_hw or x.shape[2] != self.spec.input_hw:
            raise ValueError(f"expected {self.spec.input_hw}x{self.spec.input_hw} input, "
                             f"got {x.shape[1]}x{x.shape[2]}")
        h = self._standardize(x)
        taps = []
        for i in range(len(self.spec.conv_channels)):
            h = getattr(self, f"bn{i}")(getattr(self, f"conv{i}")(h)).relu()
            taps.append(h)
        return project_feature_stats([taps[i] for i in self.spec.taps])

    def heads_from_stats(self, stats: FeatureStats) -> tuple[GaussianLatent, GaussianLatent]:
        flat = stats.flat()
        hz = self.head_z(flat)
        hn = self.head_zn(flat)
        k, kn = self.spec.k, self.spec.k_n
        # log-sigma is range-bounded so exp() keeps strict positivity in float32
        z_head = GaussianLatent(hz[:, :k], hz[:, k:].clip(-7.0, 5.0).exp())
        zn_head = GaussianLatent(hn[:, :kn], hn[:, kn:].clip(-7.0, 5.0).exp())
        return z_head, zn_head

    def encode(self, x, noise_z=None, noise_zn=None) -> EncodeResult:
        """Encode [0,1] NHWC images. Noise arrays default to zero (deterministic mode)."""
        x = as_tensor(x)
        stats = self.trunk_stats(x)
        z_head, zn_head = self.heads_from_stats(stats)
        nz = np.zeros(z_head.mu.shape, dtype=z_head.mu.dtype) if noise_z is None else noise_z
        nn_ = np.zeros(zn_head.mu.shape, dtype=zn_head.mu.dtype) if noise_zn is None else noise_zn
        z = reparam_sample(z_head, nz)
        z_n = reparam_sample(zn_head, nn_)
        pair = LatentPair(z=z, z_n=z_n)
        return EncodeResult(pair, z_head, zn_head, stats, None)

    def decode(self, pair: LatentPair) -> Tensor:
        latent = concat([pair.z, pair.nuisance_flat()], axis=-1)
        want = self.spec.k + self.spec.nuisance_payload_dim
        if latent.shape[-1] != want:
            raise ValueError(f"latent dim {latent.shape[-1]} != decoder input dim {want}")
        return self.decoder(latent)

    def classify(self, z: Tensor) -> Tensor:
        return self.classifier(z).softmax(axis=-1)

    def predict_probs(self, x) -> np.ndarray:
        """Deterministic class probabilities for [0,1] NHWC images (eval mode)."""
        with no_grad():
            res = self.encode(as_tensor(x))
            return self.classify(res.pair.z).data


# ---------------------------------------------------------------------------
# transformer family

class ViTAENIB(Module):
    """Tiny ViT encoder/decoder with a VQ nuisance channel."""

    def __init__(self, enc_spec: EncoderSpec, dec_spec: DecoderSpec,
                 rng: np.random.Generator):
        super().__init__()
        self.spec = enc_spec
        self.dec_spec = dec_spec
        dtype = enc_spec.np_dtype
        p, d = enc_spec.patch, enc_spec.embed_dim
        n = enc_spec.grid ** 2
        if enc_spec.sem_slice + enc_spec.vq_dim > d:
            raise ValueError("semantic + nuisance slices exceed the embed dim")
        self.patch_embed = Linear(p * p * enc_spec.in_channels, d, rng, dtype, init="xavier")
        self.pos = Parameter((rng.standard_normal((1, n, d)) * 0.02).astype(dtype))
        for i in range(enc_spec.depth):
            setattr(self, f"block{i}", TransformerBlock(d, enc_spec.heads, rng, dtype))
        self.ln = LayerNorm(d, dtype)
        self.head_z = Linear(enc_spec.sem_slice, 2 * enc_spec.k, rng, dtype, init="xavier")
        self.codebook = Codebook(enc_spec.vq_codes, enc_spec.vq_dim, rng,
                                 enc_spec.vq_beta, dtype)
        self.classifier = Linear(enc_spec.k, enc_spec.n_classes, rng, dtype, init="xavier")
        # decoder
        self.dec_z = Linear(enc_spec.k, d, rng, dtype, init="xavier")
        self.dec_n = Linear(enc_spec.vq_dim, d, rng, dtype, init="xavier")
        self.dec_pos = Parameter((rng.standard_normal((1, n, d)) * 0.02).astype(dtype))
        for i in range(dec_spec.depth):
            setattr(self, f"dec_block{i}", TransformerBlock(d, enc_spec.heads, rng, dtype))
        self.dec_ln = LayerNorm(d, dtype)
        self.dec_out = Linear(d, p * p * enc_spec.in_channels, rng, dtype, init="xavier")
        hid = enc_spec.mlp_hidden
        self.q_n = MLP([n * enc_spec.vq_dim, hid, enc_spec.n_classes], rng, dtype)
        self.d_z = SpectralMLP([enc_spec.k, hid, 1], rng, dtype)

    def _named(self, modules: dict[str, Module]) -> dict[str, Tensor]:
        out = {}
        for name, mod in modules.items():
            out.update(mod.named_parameters(name + "."))
        return out

    def trunk_parameters(self) -> dict[str, Tensor]:
        """Whole transformer encoder side (trained with the encoder optimizer)."""
        mods = {"patch_embed": self.patch_embed, "ln": self.ln, "head_z": self.head_z,
                "classifier": self.classifier, "codebook": self.codebook}
        mods.update({f"block{i}": getattr(self, f"block{i}") for i in range(self.spec.depth)})
        params = self._named(mods)
        params["pos"] = self.pos
        return params

    def generator_adam_parameters(self) -> dict[str, Tensor]:
        mods = {"dec_z": self.dec_z, "dec_n": self.dec_n, "dec_ln": self.dec_ln,
                "dec_out": self.dec_out}
        mods.update({f"dec_block{i}": getattr(self, f"dec_block{i}")
                     for i in range(self.dec_spec.depth)})
        params = self._named(mods)
        params["dec_pos"] = self.dec_pos
        return params

    def discriminator_parameters(self) -> dict[str, Tensor]:
        return self._named({"q_n": self.q_n, "d_z": self.d_z})

    def _standardize(self, x: Tensor) -> Tensor:
        mean = np.asarray(self.spec.norm_mean, dtype=self.spec.np_dtype)
        std = np.asarray(self.spec.norm_std, dtype=self.spec.np_dtype)
        return (x - mean) / std

    def encode(self, x, noise_z=None, noise_zn=None) -> EncodeResult:
        x = as_tensor(x)
        if x.shape[1] != self.spec.input_hw or x.shape[2] != self.spec.input_hw:
            raise ValueError(f"expected {self.spec.input_hw}x{self.spec.input_hw} input, "
                             f"got {x.shape[1]}x{x.shape[2]}")
        tokens = self.patch_embed(patchify(self._standardize(x), self.spec.patch)) + self.pos
        for i in range(self.spec.depth):
            tokens = getattr(self, f"block{i}")(tokens)
        tokens = self.ln(tokens)
        sem = tokens[:, :, :self.spec.sem_slice].mean(axis=1)
        hz = self.head_z(sem)
        k = self.spec.k
        z_head = GaussianLatent(hz[:, :k], hz[:, k:].clip(-7.0, 5.0).exp())
        nz = np.zeros(z_head.mu.shape, dtype=z_head.mu.dtype) if noise_z is None else noise_z
        z = reparam_sample(z_head, nz)
        zn_hat = tokens[:, :, self.spec.sem_slice:self.spec.sem_slice + self.spec.vq_dim]
        codes, quantized, vq_loss = vq_quantize(zn_hat, self.codebook)
        pair = LatentPair(z=z, codes=codes, quantized=quantized)
        return EncodeResult(pair, z_head, None, None, vq_loss)

    def decode(self, pair: LatentPair) -> Tensor:
        if not pair.is_vq:
            raise ValueError("transformer decoder expects a VQ nuisance payload")
        z, q = pair.z, pair.quantized
        tok = self.dec_z(z).reshape(z.shape[0], 1, -1) + self.dec_n(q) + self.dec_pos
        for i in range(self.dec_spec.depth):
            tok = getattr(self, f"dec_block{i}")(tok)
        pix = self.dec_out(self.dec_ln(tok))
        g = self.spec.grid
        return unpatchify(pix, (g, g), self.spec.patch, self.spec.in_channels).sigmoid()

    def classify(self, z: Tensor) -> Tensor:
        return self.classifier(z).softmax(axis=-1)

    def predict_probs(self, x) -> np.ndarray:
        with no_grad():
            res = self.encode(as_tensor(x))
            return self.classify(res.pair.z).data


def build_model(enc_spec: EncoderSpec, dec_spec: DecoderSpec | None,
                rng: np.random.Generator):
    dec_spec = dec_spec or DecoderSpec()
    if enc_spec.family == "small-conv":
        return ConvAENIB(enc_spec, dec_spec, rng)
    return ViTAENIB(enc_spec, dec_spec, rng)
