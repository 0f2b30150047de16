"""Reverse-mode automatic differentiation over numpy arrays.

A small tape-based engine: every `Tensor` wraps an ndarray, records the op
that produced it, and `backward()` walks the graph in reverse topological
order. Arrays keep whatever float dtype they were built with, so the same
graph runs in float32 for training and float64 for finite-difference checks.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "as_tensor", "no_grad", "concat", "stack", "grad_check"]


class _GradMode:
    enabled = True


class no_grad:
    """Context manager disabling graph recording (inference / discriminator-phase forwards)."""

    def __enter__(self):
        self.prev = _GradMode.enabled
        _GradMode.enabled = False
        return self

    def __exit__(self, *exc):
        _GradMode.enabled = self.prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        if not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GradMode.enabled
        self._backward = None
        self._parents = ()

    # -- graph plumbing ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        return float(self.data)

    __float__ = item

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy() if g.dtype == self.data.dtype else g.astype(self.data.dtype)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without gradient requires a scalar output")
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [self]
        while stack:
            t = stack[-1]
            if id(t) in seen:
                stack.pop()
                continue
            pending = [p for p in t._parents if id(p) not in seen]
            if pending:
                stack.extend(pending)
            else:
                seen.add(id(t))
                topo.append(t)
                stack.pop()
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def zero_grad(self):
        self.grad = None

    # -- op construction helper ---------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents, backward) -> "Tensor":
        out = Tensor(data)
        if _GradMode.enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(p for p in parents if p.requires_grad)
            out._backward = backward
        return out

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):  # scalar path: no dtype promotion
            a, c = self, other

            def bws(g):
                a._accumulate(g)

            return Tensor._make(a.data + a.data.dtype.type(c), (a,), bws)
        other = as_tensor(other)
        a, b = self, other
        out_data = a.data + b.data

        def bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._make(out_data, (a, b), bw)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            a, c = self, other
            cc = a.data.dtype.type(c)

            def bws(g):
                a._accumulate(g * cc)

            return Tensor._make(a.data * cc, (a,), bws)
        other = as_tensor(other)
        a, b = self, other
        out_data = a.data * b.data

        def bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._make(out_data, (a, b), bw)

    __rmul__ = __mul__

    def __neg__(self):
        a = self

        def bw(g):
            a._accumulate(-g)

        return Tensor._make(-a.data, (a,), bw)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-other)
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return (-self) + other

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        other = as_tensor(other)
        a, b = self, other
        out_data = a.data / b.data

        def bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._make(out_data, (a, b), bw)

    def __rtruediv__(self, other):
        if isinstance(other, (int, float)):
            a, c = self, other
            out_data = a.data.dtype.type(c) / a.data

            def bw(g):
                a._accumulate(-g * out_data / a.data)

            return Tensor._make(out_data, (a,), bw)
        return as_tensor(other) / self

    def __pow__(self, p: float):
        a = self
        out_data = a.data ** p

        def bw(g):
            a._accumulate(g * p * a.data ** (p - 1))

        return Tensor._make(out_data, (a,), bw)

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out_data = a.data @ b.data

        def bw(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._accumulate(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b._accumulate(_unbroadcast(gb, b.data.shape))

        return Tensor._make(out_data, (a, b), bw)

    # -- elementwise functions -------------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def bw(g):
            a._accumulate(g * out_data)

        return Tensor._make(out_data, (a,), bw)

    def log(self):
        a = self

        def bw(g):
            a._accumulate(g / a.data)

        return Tensor._make(np.log(a.data), (a,), bw)

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)

        def bw(g):
            a._accumulate(g * 0.5 / out_data)

        return Tensor._make(out_data, (a,), bw)

    def tanh(self):
        a = self
        out_data = np.tanh(a.data)

        def bw(g):
            a._accumulate(g * (1.0 - out_data * out_data))

        return Tensor._make(out_data, (a,), bw)

    def sigmoid(self):
        a = self
        out_data = 0.5 * (np.tanh(0.5 * a.data) + 1.0)  # stable for large |x|

        def bw(g):
            a._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._make(out_data, (a,), bw)

    def relu(self):
        a = self
        mask = a.data > 0

        def bw(g):
            a._accumulate(g * mask)

        return Tensor._make(a.data * mask, (a,), bw)

    def gelu(self):
        # tanh approximation; smooth and cheap, derivative in closed form
        a = self
        c = np.sqrt(2.0 / np.pi).astype(a.data.dtype) if a.data.dtype == np.float32 else np.sqrt(2.0 / np.pi)
        x = a.data
        inner = c * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        out_data = 0.5 * x * (1.0 + t)

        def bw(g):
            d_inner = c * (1.0 + 3 * 0.044715 * x ** 2)
            da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
            a._accumulate(g * da)

        return Tensor._make(out_data, (a,), bw)

    def abs(self):
        a = self
        s = np.sign(a.data)

        def bw(g):
            a._accumulate(g * s)

        return Tensor._make(np.abs(a.data), (a,), bw)

    def clip_min(self, lo: float):
        """max(x, lo); gradient passes where x > lo (probability clamps before log)."""
        a = self
        mask = a.data > lo

        def bw(g):
            a._accumulate(g * mask)

        return Tensor._make(np.maximum(a.data, lo), (a,), bw)

    def clip(self, lo: float, hi: float):
        """Clamp to [lo, hi]; gradient passes only in the interior."""
        a = self
        mask = (a.data > lo) & (a.data < hi)

        def bw(g):
            a._accumulate(g * mask)

        return Tensor._make(np.clip(a.data, lo, hi), (a,), bw)

    # -- reductions / shape ------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy() if np.ndim(g) else np.full_like(a.data, g))
            else:
                gg = g
                if not keepdims:
                    gg = np.expand_dims(gg, axis=axis)
                a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

        return Tensor._make(out_data, (a,), bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else (
            np.prod([self.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out_data = a.data.reshape(shape)

        def bw(g):
            a._accumulate(g.reshape(a.data.shape))

        return Tensor._make(out_data, (a,), bw)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = np.argsort(axes)

        def bw(g):
            a._accumulate(g.transpose(inv))

        return Tensor._make(a.data.transpose(axes), (a,), bw)

    def __getitem__(self, idx):
        a = self
        out_data = a.data[idx]
        basic = not any(isinstance(i, np.ndarray) for i in
                        (idx if isinstance(idx, tuple) else (idx,)))

        def bw(g):
            full = np.zeros_like(a.data)
            if basic:
                full[idx] += g  # slices/ints address unique elements
            else:
                np.add.at(full, idx, g)
            a._accumulate(full)

        return Tensor._make(out_data, (a,), bw)

    def broadcast_to(self, shape):
        a = self

        def bw(g):
            a._accumulate(_unbroadcast(g, a.data.shape))

        return Tensor._make(np.broadcast_to(a.data, shape).copy(), (a,), bw)

    def take_rows(self, index: np.ndarray):
        """Row gather a[index] for integer index arrays (embedding/label lookup)."""
        a = self
        index = np.asarray(index)
        out_data = a.data[index]

        def bw(g):
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            a._accumulate(full)

        return Tensor._make(out_data, (a,), bw)

    # -- composite numerics -------------------------------------------------------

    def log_softmax(self, axis=-1):
        shift = self - Tensor(np.max(self.data, axis=axis, keepdims=True))
        return shift - shift.exp().sum(axis=axis, keepdims=True).log()

    def softmax(self, axis=-1):
        return self.log_softmax(axis=axis).exp()


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor._make(out_data, tuple(tensors), bw)


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return Tensor._make(out_data, tuple(tensors), bw)


def grad_check(fn, inputs, eps: float = 1e-6, seed: int = 0) -> float:
    """Max relative error between analytic and central finite-difference gradients.

    `fn` maps a list of float64 Tensors to a scalar Tensor. Each input is
    perturbed coordinate-wise; relative error is |a - n| / max(1, |a|, |n|).
    """
    inputs = [Tensor(np.asarray(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*inputs)
    out.backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(fn(*inputs).data)
            flat[i] = orig - eps
            lo = float(fn(*inputs).data)
            flat[i] = orig
            num = (hi - lo) / (2 * eps)
            ana = analytic.reshape(-1)[i]
            rel = abs(ana - num) / max(1.0, abs(ana), abs(num))
            worst = max(worst, rel)
    return worst
