"""Optimizers (momentum SGD, Adam, AdamW) and the cosine learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["SGD", "Adam", "AdamW", "cosine_lr", "make_optimizer"]


class Optimizer:
    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = dict(params)
        self.base_lr = lr
        self.lr = lr

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def set_lr_factor(self, factor: float):
        self.lr = self.base_lr * factor

    def state_arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        raise NotImplementedError


class SGD(Optimizer):
    """Momentum SGD, optionally Nesterov, with decoupled-style L2 weight decay
    added to the gradient (the classic coupled form)."""

    def __init__(self, params, lr: float, momentum: float = 0.9,
                 nesterov: bool = True, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.momentum, self.nesterov, self.weight_decay = momentum, nesterov, weight_decay
        self.velocity = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self.velocity[k]
            v *= self.momentum
            v += g
            upd = g + self.momentum * v if self.nesterov else v
            p.data -= self.lr * upd

    def state_arrays(self):
        return {f"velocity.{k}": v for k, v in self.velocity.items()}

    def load_state_arrays(self, arrays):
        for k in self.velocity:
            self.velocity[k] = arrays[f"velocity.{k}"].copy()


class Adam(Optimizer):
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, decoupled: bool = False):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        bc1 = 1 - self.b1 ** self.t
        bc2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and not self.decoupled:
                g = g + self.weight_decay * p.data
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * (g * g)
            upd = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and self.decoupled:
                upd = upd + self.weight_decay * p.data
            p.data -= self.lr * upd

    def state_arrays(self):
        out = {"t": np.array([self.t], dtype=np.int64)}
        out.update({f"m.{k}": v for k, v in self.m.items()})
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["t"][0])
        for k in self.m:
            self.m[k] = arrays[f"m.{k}"].copy()
            self.v[k] = arrays[f"v.{k}"].copy()


def AdamW(params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
          weight_decay: float = 0.0) -> Adam:
    return Adam(params, lr, betas, eps, weight_decay, decoupled=True)


def cosine_lr(step: int, total_steps: int, warmup_steps: int = 0) -> float:
    """Learning-rate factor in [0, 1]: linear warmup then cosine decay to ~0."""
    if warmup_steps and step < warmup_steps:
        return (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    frac = min(1.0, (step - warmup_steps) / span)
    return 0.5 * (1.0 + np.cos(np.pi * frac))


def make_optimizer(kind: str, params: dict[str, Tensor], lr: float, *,
                   momentum: float = 0.9, betas=(0.9, 0.999),
                   weight_decay: float = 0.0) -> Optimizer:
    kind = kind.lower()
    if kind == "sgd":
        return SGD(params, lr, momentum=momentum, nesterov=True, weight_decay=weight_decay)
    if kind == "adam":
        return Adam(params, lr, betas=betas, weight_decay=weight_decay)
    if kind == "adamw":
        return AdamW(params, lr, betas=betas, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer kind: {kind!r}")
