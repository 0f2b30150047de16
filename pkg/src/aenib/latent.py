"""Stochastic Gaussian latent primitives: reparametrized sampling, the KL
regularizer against a standard-normal prior, and the nuisance log-likelihood
score. These are the probabilistic building blocks shared by the encoder
heads, the training objective, and the OOD scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor

__all__ = ["GaussianLatent", "LatentPair", "reparam_sample",
           "kl_to_standard_normal", "nuisance_log_likelihood"]


@dataclass
class GaussianLatent:
    """Per-sample (mu, sigma) pair parameterizing a diagonal-Gaussian latent head.

    `mu` and `sigma` may be plain arrays or autodiff Tensors; shapes must agree
    and sigma must be strictly positive elementwise. Internally the encoder
    parameterizes log(sigma) and exponentiates, so positivity holds by
    construction there; this type validates it at the boundary.
    """

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        self.mu = as_tensor(self.mu)
        self.sigma = as_tensor(self.sigma)
        if self.mu.shape != self.sigma.shape:
            raise ValueError(f"mu shape {self.mu.shape} != sigma shape {self.sigma.shape}")
        if not np.all(self.sigma.data > 0):
            raise ValueError("sigma must be strictly positive elementwise")

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


@dataclass
class LatentPair:
    """Semantic latent z plus exactly one nuisance payload.

    The nuisance is either a dense vector `z_n` (conv path) or a sequence of
    codebook indices with their quantized vectors (VQ path).
    """

    z: Tensor
    z_n: Tensor | None = None
    codes: np.ndarray | None = None
    quantized: Tensor | None = None

    def __post_init__(self):
        dense = self.z_n is not None
        vq = self.codes is not None or self.quantized is not None
        if dense == vq:
            raise ValueError("exactly one nuisance payload (dense z_n or VQ codes) must be set")
        if vq and (self.codes is None or self.quantized is None):
            raise ValueError("VQ payload requires both codes and quantized vectors")

    @property
    def is_vq(self) -> bool:
        return self.codes is not None

    def nuisance_flat(self) -> Tensor:
        """Nuisance content as a flat per-sample vector (dense z_n, or the
        concatenated quantized patch vectors on the VQ path)."""
        if self.is_vq:
            q = self.quantized
            return q.reshape(q.shape[0], -1)
        return self.z_n


def reparam_sample(latent: GaussianLatent, noise) -> Tensor:
    """Draw mu + noise * sigma; differentiable in mu and sigma.

    `noise` is a standard-normal draw of the same shape as the latent.
    """
    noise = as_tensor(noise)
    if noise.shape != latent.mu.shape:
        raise ValueError(f"noise shape {noise.shape} != latent shape {latent.mu.shape}")
    return latent.mu + noise.detach() * latent.sigma


def kl_to_standard_normal(latent: GaussianLatent) -> Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)) = sum_i 0.5 (mu_i^2 + sigma_i^2 - 1 - log sigma_i^2).

    Sums over the latent dimension; for batched (B, K) inputs returns a
    per-sample (B,) vector.
    """
    mu, sigma = latent.mu, latent.sigma
    var = sigma * sigma
    per_dim = 0.5 * (mu * mu + var - 1.0 - var.log())
    return per_dim.sum(axis=-1)


def nuisance_log_likelihood(z_n) -> np.ndarray | float:
    """Standard-normal log-likelihood of a dense nuisance vector, constants
    dropped: -0.5 * ||z_n||^2. Maximal (0) at the origin.
    """
    z = np.asarray(z_n.data if isinstance(z_n, Tensor) else z_n, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empty nuisance vector")
    val = -0.5 * np.sum(z * z, axis=-1)
    return float(val) if np.ndim(val) == 0 else val
