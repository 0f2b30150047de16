"""Loss terms of the nuisance-extended training objective and their composition.

Every term is differentiable through the autodiff engine; probability inputs
are clamped at EPS_P = 1e-12 before any log. Batch reduction is the
arithmetic mean throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor

__all__ = [
    "EPS_P", "LossWeights", "LossReport", "recon_nmse", "ssim", "d2_squared",
    "nuis_discriminator_loss", "nuis_encoder_loss", "ind_losses", "vib_loss",
    "adversarial_similarity_losses", "total_aenib", "cross_entropy",
]

EPS_P = 1e-12

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossWeights:
    """Configured weights: alpha scales reconstruction, beta the information
    bottleneck, tau is the similarity temperature."""

    alpha: float = 10.0
    beta: float = 1e-4
    tau: float = 0.2
    recon_kind: str = "nmse"  # "nmse" | "d2sq"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.recon_kind not in ("nmse", "d2sq"):
            raise ValueError(f"unknown recon_kind: {self.recon_kind!r}")


@dataclass
class LossReport:
    """Named per-term loss values plus the weighted total.

    `total` is recomposed from the reported parts in a fixed evaluation order,
    so recomputing it from the fields reproduces it bit-exactly.
    """

    vib: float
    recon: float
    nuis: float
    ind: float
    sim: float | None = None
    vq: float | None = None
    total: float = 0.0

    @staticmethod
    def compose_total(vib: float, recon: float, nuis: float, ind: float,
                      alpha: float, sim: float | None = None,
                      vq: float | None = None) -> float:
        total = vib + alpha * recon + nuis + ind
        if sim is not None:
            total = total + sim
        if vq is not None:
            total = total + vq
        return total

    def as_dict(self) -> dict:
        out = {"vib": self.vib, "recon": self.recon, "nuis": self.nuis, "ind": self.ind}
        if self.sim is not None:
            out["sim"] = self.sim
        if self.vq is not None:
            out["vq"] = self.vq
        out["total"] = self.total
        return out


def _check_probs(p: Tensor):
    rows = p.data.sum(axis=-1)
    if not np.all(np.isfinite(p.data)) or np.any(p.data < -1e-9):
        raise ValueError("malformed probability distribution (negative or non-finite entries)")
    if np.any(np.abs(rows - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1 within 1e-6")


def cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log probability of the true labels, clamped at EPS_P."""
    probs = as_tensor(probs)
    _check_probs(probs)
    labels = np.asarray(labels)
    n = probs.shape[0]
    picked = probs[np.arange(n), labels]
    return -(picked.clip_min(EPS_P).log()).mean()


def recon_nmse(x, x_hat) -> Tensor:
    """Normalized MSE ||x - x_hat||^2 / ||x||^2 per sample, averaged over the
    batch. The denominator is guarded at 1e-8."""
    x, x_hat = as_tensor(x), as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError("x and x_hat must have equal shapes")
    b = x.shape[0]
    xf = x.reshape(b, -1)
    rf = x_hat.reshape(b, -1)
    num = ((xf - rf) * (xf - rf)).sum(axis=-1)
    den = (xf * xf).sum(axis=-1).clip_min(1e-8)
    return (num / den).mean()


def _box_mean(img: Tensor, window: int) -> Tensor:
    """Uniform sliding-window mean with stride 1 over an (B, H, W) image."""
    B, H, W = img.shape
    Ho, Wo = H - window + 1, W - window + 1
    acc = None
    for di in range(window):
        for dj in range(window):
            sl = img[:, di:di + Ho, dj:dj + Wo]
            acc = sl if acc is None else acc + sl
    return acc * (1.0 / (window * window))


def _ssim_components(x: Tensor, y: Tensor, window: int):
    """Per-window luminance (S1) and structure (S2) maps, uniform windows."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ValueError("images must have equal shapes")
    if x.ndim == 2:
        x, y = x.reshape(1, *x.shape), y.reshape(1, *y.shape)
    if x.ndim == 4:  # (B, H, W, C): fold channels into the batch
        B, H, W, C = x.shape
        x = x.transpose(0, 3, 1, 2).reshape(B * C, H, W)
        y = y.transpose(0, 3, 1, 2).reshape(B * C, H, W)
    H, W = x.shape[1], x.shape[2]
    if window > min(H, W):
        raise ValueError(f"window {window} larger than image side {min(H, W)}")
    mx = _box_mean(x, window)
    my = _box_mean(y, window)
    mxx = _box_mean(x * x, window)
    myy = _box_mean(y * y, window)
    mxy = _box_mean(x * y, window)
    vx = mxx - mx * mx
    vy = myy - my * my
    cov = mxy - mx * my
    s1 = (2.0 * mx * my + SSIM_C1) / (mx * mx + my * my + SSIM_C1)
    s2 = (2.0 * cov + SSIM_C2) / (vx + vy + SSIM_C2)
    return s1, s2


def ssim(x, y, window: int = 8) -> Tensor:
    """Structural similarity: mean over sliding windows of S1 * S2 with
    constants c1 = 0.01^2, c2 = 0.03^2."""
    s1, s2 = _ssim_components(x, y, window)
    return (s1 * s2).mean()


def d2_squared(x, y, window: int = 8) -> Tensor:
    """Squared SSIM-derived distance 2 - S1 - S2, window-averaged. Zero iff
    every window has S1 = S2 = 1; symmetric in (x, y)."""
    s1, s2 = _ssim_components(x, y, window)
    return (2.0 - s1 - s2).mean()


def nuis_discriminator_loss(q_n_probs, labels) -> Tensor:
    """Inner minimization of the nuisance game: mean cross-entropy of the
    nuisance classifier's predictions against the true labels."""
    return cross_entropy(as_tensor(q_n_probs), labels)


def nuis_encoder_loss(q_n_probs) -> Tensor:
    """Outer nuisance term: cross-entropy toward the uniform distribution,
    -(1/K) sum_y log q_n(y), batch-averaged. Minimum ln K at uniform q_n."""
    p = as_tensor(q_n_probs)
    _check_probs(p)
    k = p.shape[-1]
    return -(p.clip_min(EPS_P).log().sum(axis=-1)).mean() * (1.0 / k)


def ind_losses(d_real, d_fake) -> tuple[Tensor, Tensor]:
    """Independence-game losses from post-sigmoid discriminator outputs.

    Prior samples are the "real" class. Returns (disc_loss, enc_loss):
    disc_loss = -[mean log d_real + mean log (1 - d_fake)], minimized by the
    discriminator; enc_loss = mean log (1 - d_fake), the saturating form the
    encoder minimizes.
    """
    d_real, d_fake = as_tensor(d_real), as_tensor(d_fake)
    for d in (d_real, d_fake):
        if np.any(d.data <= 0) or np.any(d.data >= 1):
            raise ValueError("discriminator outputs must lie strictly in (0, 1)")
    enc = (1.0 - d_fake).clip_min(EPS_P).log().mean()
    disc = -(d_real.clip_min(EPS_P).log().mean()) - enc
    return disc, enc


def vib_loss(class_probs, labels, latent, beta: float) -> Tensor:
    """Variational bottleneck loss: mean CE(q(y|z), y) plus beta times the
    batch-mean KL of the latent head to the standard normal."""
    from .latent import kl_to_standard_normal
    ce = cross_entropy(as_tensor(class_probs), labels)
    kl = kl_to_standard_normal(latent)
    return ce + beta * kl.mean()


def _cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    na = (a * a).sum(axis=-1)
    nb = (b * b).sum(axis=-1)
    if np.any(na.data <= 0) or np.any(nb.data <= 0):
        raise ValueError("zero-norm embedding in cosine similarity")
    return (a * b).sum(axis=-1) / (na.sqrt() * nb.sqrt())


def adversarial_similarity_losses(proj_real, proj_fake, d_x, tau: float
                                  ) -> tuple[Tensor, Tensor]:
    """Adversarial feature-similarity guidance.

    `d_x` maps flattened feature-statistic projections to embeddings; the
    per-pair value is log(1 - sigmoid(cos_sim / tau)). The generator minimizes
    it (pulls embeddings together); the discriminator maximizes it. Returns
    (disc_loss, gen_loss) with disc_loss = -gen_loss.
    """
    emb_real = d_x(as_tensor(proj_real))
    emb_fake = d_x(as_tensor(proj_fake))
    sim = _cosine_rows(emb_real, emb_fake)
    v = ((1.0 - (sim * (1.0 / tau)).sigmoid()).clip_min(EPS_P).log()).mean()
    return -v, v


def total_aenib(parts: dict, weights: LossWeights) -> LossReport:
    """Compose the named per-term values into a LossReport.

    Mandatory parts: vib, recon, nuis, ind. Optional: sim, vq. Values may be
    Tensors or floats; the report stores floats and the total is recomposed
    from them in a fixed order.
    """
    def as_float(v):
        return float(v.data) if isinstance(v, Tensor) else float(v)

    missing = [k for k in ("vib", "recon", "nuis", "ind") if k not in parts]
    if missing:
        raise ValueError(f"missing mandatory loss terms: {missing}")
    vib, recon = as_float(parts["vib"]), as_float(parts["recon"])
    nuis, ind = as_float(parts["nuis"]), as_float(parts["ind"])
    sim = as_float(parts["sim"]) if parts.get("sim") is not None else None
    vq = as_float(parts["vq"]) if parts.get("vq") is not None else None
    total = LossReport.compose_total(vib, recon, nuis, ind, weights.alpha, sim, vq)
    return LossReport(vib=vib, recon=recon, nuis=nuis, ind=ind, sim=sim, vq=vq, total=total)
