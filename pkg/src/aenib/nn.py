"""Neural-network building blocks: parameter containers, layers, and the conv op.

Layout convention is NHWC throughout (batch, height, width, channel), which
keeps the feature-statistics projection and the convolution inner loops free
of transposes.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat

__all__ = [
    "Module", "Parameter", "Linear", "MLP", "Conv2d", "BatchNorm2d",
    "LayerNorm", "MultiHeadAttention", "TransformerBlock",
    "conv2d", "upsample2x", "patchify", "unpatchify",
    "normalize_axes", "spatial_moments",
]


def Parameter(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


class Module:
    """Minimal parameter container with stable dotted names for checkpointing."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, "Module"] = {}
        self.training = True

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self.__dict__.setdefault("_params", {})[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for k, v in self._params.items():
            out[prefix + k] = v
        for k, child in self._children.items():
            out.update(child.named_parameters(prefix + k + "."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for k in self._buffers:
            out[prefix + k] = getattr(self, k)
        for k, child in self._children.items():
            out.update(child.named_buffers(prefix + k + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def load_state(self, arrays: dict[str, np.ndarray], prefix: str = ""):
        """Load parameter and buffer values in place from a flat name->array dict."""
        for name, p in self.named_parameters(prefix).items():
            p.data = arrays[name].astype(p.data.dtype, copy=True)
        for name in self.named_buffers(prefix):
            self._load_buffer(name[len(prefix):], arrays[name])

    def _load_buffer(self, dotted: str, value: np.ndarray):
        parts = dotted.split(".")
        mod = self
        for part in parts[:-1]:
            mod = mod._children[part]
        mod.register_buffer(parts[-1], value.copy())

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.named_parameters().items()}
        out.update(self.named_buffers())
        return out


# ---------------------------------------------------------------------------
# initializers

def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# layers

class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float32, init: str = "he"):
        super().__init__()
        if init == "he":
            w = he_normal(rng, (d_in, d_out), d_in, dtype)
        else:
            w = xavier_uniform(rng, (d_in, d_out), d_in, d_out, dtype)
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(d_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class MLP(Module):
    """Fully-connected stack with ReLU between layers (heads, discriminators)."""

    def __init__(self, dims: list[int], rng: np.random.Generator, dtype=np.float32,
                 final_init: str = "xavier"):
        super().__init__()
        self.n = len(dims) - 1
        for i in range(self.n):
            init = "he" if i < self.n - 1 else final_init
            setattr(self, f"fc{i}", Linear(dims[i], dims[i + 1], rng, dtype, init=init))

    def __call__(self, x: Tensor) -> Tensor:
        for i in range(self.n):
            x = getattr(self, f"fc{i}")(x)
            if i < self.n - 1:
                x = x.relu()
        return x


class SpectralLinear(Module):
    """Linear layer with spectral normalization (one power iteration per
    training forward). Caps the layer's Lipschitz constant at ~1 so a GAN
    discriminator cannot race to saturation."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float32, init: str = "he"):
        super().__init__()
        if init == "he":
            w = he_normal(rng, (d_in, d_out), d_in, dtype)
        else:
            w = xavier_uniform(rng, (d_in, d_out), d_in, d_out, dtype)
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(d_out, dtype=dtype))
        u = rng.standard_normal(d_out).astype(dtype)
        self.register_buffer("u", u / np.linalg.norm(u))

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            v = self.w.data @ self.u
            v = v / max(np.linalg.norm(v), 1e-12)
            u = self.w.data.T @ v
            u = u / max(np.linalg.norm(u), 1e-12)
            self.register_buffer("u", u.astype(self.w.data.dtype))
        else:
            u = self.u
            v = self.w.data @ u
            v = v / max(np.linalg.norm(v), 1e-12)
        # sigma as a graph node: gradients reach w through the normalization
        sigma = (Tensor(v[None, :]) @ self.w @ Tensor(u[:, None])).reshape(1)
        w_bar = self.w * (1.0 / sigma.clip_min(1e-12))
        return x @ w_bar + self.b


class SpectralMLP(Module):
    """MLP with spectrally normalized layers (for GAN discriminators)."""

    def __init__(self, dims: list[int], rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.n = len(dims) - 1
        for i in range(self.n):
            setattr(self, f"fc{i}", SpectralLinear(dims[i], dims[i + 1], rng, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        for i in range(self.n):
            x = getattr(self, f"fc{i}")(x)
            if i < self.n - 1:
                x = x.relu()
        return x


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, NHWC input, (k, k, Cin, Cout) weight.

    Computed as k*k GEMMs on contiguous shifted views of the flattened padded
    input — no im2col buffer. The full stride-1 grid is evaluated and then
    subsampled; row-wrap garbage only ever lands in padding columns/rows that
    the final crop discards, because the input is zero-padded.
    """
    B, H, W, Cin = x.data.shape
    k, _, _, Cout = w.data.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    Ho = (Hp - k) // stride + 1
    Wo = (Wp - k) // stride + 1
    if padding:
        xp = np.zeros((B, Hp, Wp, Cin), dtype=x.data.dtype)
        xp[:, padding:padding + H, padding:padding + W, :] = x.data
    else:
        xp = x.data if x.data.flags.c_contiguous else np.ascontiguousarray(x.data)
    if stride > 1:
        return _conv_im2col(x, w, xp, stride, padding, (B, H, W, Cin, k, Cout, Hp, Wp, Ho, Wo))
    return _conv_views(x, w, xp, padding, (B, H, W, Cin, k, Cout, Hp, Wp, Ho, Wo))


def _conv_im2col(x, w, xp, stride, padding, dims):
    """Strided convs: subsampling keeps the column buffer small, so classic
    im2col + single GEMM wins."""
    B, H, W, Cin, k, Cout, Hp, Wp, Ho, Wo = dims
    cols = np.empty((B, Ho, Wo, k, k, Cin), dtype=xp.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, :, di, dj, :] = xp[:, di:di + stride * Ho:stride,
                                          dj:dj + stride * Wo:stride, :]
    cols = cols.reshape(B * Ho * Wo, k * k * Cin)
    w_flat = w.data.reshape(k * k * Cin, Cout)
    out_data = (cols @ w_flat).reshape(B, Ho, Wo, Cout)

    def bw(g):
        g_r = g.reshape(B * Ho * Wo, Cout)
        if w.requires_grad:
            w._accumulate((cols.T @ g_r).reshape(w.data.shape))
        if x.requires_grad:
            dcols = (g_r @ w_flat.T).reshape(B, Ho, Wo, k, k, Cin)
            gxp = np.zeros_like(xp)
            for di in range(k):
                for dj in range(k):
                    gxp[:, di:di + stride * Ho:stride, dj:dj + stride * Wo:stride, :] += \
                        dcols[:, :, :, di, dj, :]
            if padding:
                gxp = gxp[:, padding:padding + H, padding:padding + W, :]
            x._accumulate(np.ascontiguousarray(gxp))

    return Tensor._make(out_data, (x, w), bw)


def _conv_views(x, w, xp, padding, dims):
    """Stride-1 convs: k*k GEMMs on contiguous shifted views of the flattened
    padded input — no column buffer. Row-wrap garbage lands only in padding
    rows/columns that the final crop discards (the input is zero-padded)."""
    B, H, W, Cin, k, Cout, Hp, Wp, Ho, Wo = dims
    xflat = xp.reshape(B * Hp * Wp, Cin)
    n_rows = B * Hp * Wp - (k - 1) * Wp - (k - 1)
    acc = np.zeros((n_rows, Cout), dtype=xp.dtype)
    for di in range(k):
        for dj in range(k):
            off = di * Wp + dj
            acc += xflat[off:off + n_rows] @ w.data[di, dj]
    full = np.zeros((B * Hp * Wp, Cout), dtype=xp.dtype)
    full[:n_rows] = acc
    out_data = np.ascontiguousarray(
        full.reshape(B, Hp, Wp, Cout)[:, :Ho, :Wo, :])

    def bw(g):
        dy = np.zeros((B, Hp, Wp, Cout), dtype=g.dtype)
        dy[:, :Ho, :Wo, :] = g.reshape(B, Ho, Wo, Cout)
        dyflat = dy.reshape(B * Hp * Wp, Cout)[:n_rows]
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for di in range(k):
                for dj in range(k):
                    off = di * Wp + dj
                    gw[di, dj] = xflat[off:off + n_rows].T @ dyflat
            w._accumulate(gw)
        if x.requires_grad:
            gx_flat = np.zeros((B * Hp * Wp, Cin), dtype=g.dtype)
            for di in range(k):
                for dj in range(k):
                    off = di * Wp + dj
                    gx_flat[off:off + n_rows] += dyflat @ w.data[di, dj].T
            gxp = gx_flat.reshape(B, Hp, Wp, Cin)
            if padding:
                gxp = gxp[:, padding:padding + H, padding:padding + W, :]
            x._accumulate(np.ascontiguousarray(gxp))

    return Tensor._make(out_data, (x, w), bw)


def normalize_axes(x: Tensor, axes: tuple, eps: float = 1e-5
                   ) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Fused (x - mean) / sqrt(var + eps) over `axes` with a hand-written
    backward; returns (normalized, mean, var) with the moments as plain arrays
    (for running-statistic tracking)."""
    data = x.data
    m = data.mean(axis=axes, keepdims=True)
    v = ((data - m) ** 2).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(v + data.dtype.type(eps))
    xhat = (data - m) * inv

    def bw(g):
        gm = g.mean(axis=axes, keepdims=True)
        gx = (g * xhat).mean(axis=axes, keepdims=True)
        x._accumulate(inv * (g - gm - xhat * gx))

    return Tensor._make(xhat, (x,), bw), m, v


def spatial_moments(x: Tensor) -> Tensor:
    """Fused channelwise spatial mean and biased variance of an NHWC map,
    stacked as (B, 2, C): [:, 0] the means, [:, 1] the variances."""
    data = x.data
    B, H, W, C = data.shape
    m = data.mean(axis=(1, 2))
    centered = data - m[:, None, None, :]
    v = (centered ** 2).mean(axis=(1, 2))
    out = np.stack([m, v], axis=1)
    scale = 1.0 / (H * W)

    def bw(g):
        gm = g[:, 0][:, None, None, :]
        gv = g[:, 1][:, None, None, :]
        # d mean / dx = 1/HW; d var / dx = 2 (x - m) / HW (cross term vanishes)
        x._accumulate(scale * gm + (2.0 * scale) * gv * centered)

    return Tensor._make(out, (x,), bw)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int, padding: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.w = Parameter(he_normal(rng, (k, k, c_in, c_out), k * k * c_in, dtype))
        self.b = Parameter(np.zeros(c_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.stride, self.padding) + self.b


class BatchNorm2d(Module):
    """Channelwise batch normalization over (B, H, W) with running statistics."""

    def __init__(self, c: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.track_stats = True
        self.gamma = Parameter(np.ones(c, dtype=dtype))
        self.beta = Parameter(np.zeros(c, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(c, dtype=dtype))
        self.register_buffer("running_var", np.ones(c, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            xhat, m, v = normalize_axes(x, (0, 1, 2), self.eps)
            if self.track_stats:
                rm = (1 - self.momentum) * self.running_mean + self.momentum * m.reshape(-1)
                rv = (1 - self.momentum) * self.running_var + self.momentum * v.reshape(-1)
                self.register_buffer("running_mean", rm.astype(self.running_mean.dtype))
                self.register_buffer("running_var", rv.astype(self.running_var.dtype))
        else:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return xhat * self.gamma + self.beta


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(d, dtype=dtype))
        self.beta = Parameter(np.zeros(d, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        xhat, _, _ = normalize_axes(x, (x.ndim - 1,), self.eps)
        return xhat * self.gamma + self.beta


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        assert d % heads == 0
        self.h, self.dh = heads, d // heads
        self.qkv = Linear(d, 3 * d, rng, dtype, init="xavier")
        self.proj = Linear(d, d, rng, dtype, init="xavier")

    def __call__(self, x: Tensor) -> Tensor:
        B, N, D = x.shape
        qkv = self.qkv(x).reshape(B, N, 3, self.h, self.dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]           # (B, h, N, dh)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.dh))
        attn = scores.softmax(axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(B, N, D)
        return self.proj(out)


class TransformerBlock(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator, dtype=np.float32,
                 mlp_ratio: int = 2):
        super().__init__()
        self.ln1 = LayerNorm(d, dtype)
        self.attn = MultiHeadAttention(d, heads, rng, dtype)
        self.ln2 = LayerNorm(d, dtype)
        self.fc1 = Linear(d, mlp_ratio * d, rng, dtype, init="xavier")
        self.fc2 = Linear(mlp_ratio * d, d, rng, dtype, init="xavier")

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.fc2(self.fc1(self.ln2(x)).gelu())


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling on NHWC tensors."""
    B, H, W, C = x.data.shape
    out_data = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bw(g):
        x._accumulate(g.reshape(B, H, 2, W, 2, C).sum(axis=(2, 4)))

    return Tensor._make(out_data, (x,), bw)


def patchify(x: Tensor, patch: int) -> Tensor:
    """(B, H, W, C) -> (B, (H/p)*(W/p), p*p*C) token grid in row-major patch order."""
    B, H, W, C = x.shape
    gh, gw = H // patch, W // patch
    t = x.reshape(B, gh, patch, gw, patch, C).transpose(0, 1, 3, 2, 4, 5)
    return t.reshape(B, gh * gw, patch * patch * C)


def unpatchify(tokens: Tensor, grid_hw: tuple[int, int], patch: int, channels: int) -> Tensor:
    gh, gw = grid_hw
    B = tokens.shape[0]
    t = tokens.reshape(B, gh, gw, patch, patch, channels).transpose(0, 1, 3, 2, 4, 5)
    return t.reshape(B, gh * patch, gw * patch, channels)
