"""Minimal neural-net layers with explicit forward/backward passes.

Every layer is functional: ``forward`` returns ``(output, cache)`` and never
mutates layer state, so inference is safe to share across threads.  ``backward``
consumes the cache, accumulates parameter gradients in place and returns the
gradient with respect to the layer input.  All gradients are exact and are
verified against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


class Param:
    """A named weight array with an accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Param({self.name}, shape={self.value.shape})"


def he_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
            dtype=np.float32) -> np.ndarray:
    """Kaiming-normal init for layers feeding a ReLU."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def xavier_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                fan_out: int, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear:
    """y = x @ W + b over the last axis."""

    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float32, init: str = "he"):
        if init == "he":
            w = he_init(rng, (d_in, d_out), d_in, dtype)
        else:
            w = xavier_init(rng, (d_in, d_out), d_in, d_out, dtype)
        self.W = Param(f"{name}.W", w)
        self.b = Param(f"{name}.b", np.zeros(d_out, dtype=dtype))

    def params(self) -> list[Param]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray):
        return x @ self.W.value + self.b.value, x

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        x = cache
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.W.grad += x2.T @ dy2
        self.b.grad += dy2.sum(axis=0)
        return dy @ self.W.value.T


def relu(x: np.ndarray):
    y = np.maximum(x, 0.0)
    return y, (x > 0.0)


def relu_backward(mask: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * mask


def _windows_1d(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Strided view (B, T_out, C, k) over x of shape (B, C, L); no copy."""
    b, c, length = x.shape
    t_out = (length - k) // stride + 1
    sb, sc, sl = x.strides
    return as_strided(x, shape=(b, t_out, c, k),
                      strides=(sb, sl * stride, sc, sl), writeable=False)


def conv1d_out_len(length, k: int, stride: int):
    """Valid-convolution output length; works on ints or integer arrays."""
    return (length - k) // stride + 1


class Conv1d:
    """Strided valid 1-D convolution: (B, C_in, L) -> (B, C_out, T)."""

    def __init__(self, name: str, c_in: int, c_out: int, k: int, stride: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.k = k
        self.stride = stride
        self.c_in = c_in
        self.c_out = c_out
        self.W = Param(f"{name}.W", he_init(rng, (c_in * k, c_out), c_in * k, dtype))
        self.b = Param(f"{name}.b", np.zeros(c_out, dtype=dtype))

    def params(self) -> list[Param]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray):
        b, c, length = x.shape
        if length < self.k:
            raise ValueError(f"input length {length} shorter than kernel {self.k}")
        cols = _windows_1d(x, self.k, self.stride)          # (B, T, C, k)
        t_out = cols.shape[1]
        flat = cols.reshape(b * t_out, c * self.k)
        y = flat @ self.W.value + self.b.value
        y = y.reshape(b, t_out, self.c_out).transpose(0, 2, 1)
        return np.ascontiguousarray(y), x

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        x = cache
        b, c, length = x.shape
        t_out = dy.shape[2]
        dy_flat = np.ascontiguousarray(dy.transpose(0, 2, 1)).reshape(b * t_out, self.c_out)
        cols = _windows_1d(x, self.k, self.stride).reshape(b * t_out, c * self.k)
        self.W.grad += cols.T @ dy_flat
        self.b.grad += dy_flat.sum(axis=0)
        dcols = (dy_flat @ self.W.value.T).reshape(b, t_out, c, self.k)
        dx = np.zeros_like(x)
        s = self.stride
        for j in range(self.k):
            dx[:, :, j:j + s * t_out:s] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dx


def _windows_2d(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided view (B, Ho, Wo, C, kh, kw) over x of shape (B, C, H, W)."""
    b, c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    sb, sc, sh, sw = x.strides
    return as_strided(x, shape=(b, ho, wo, c, kh, kw),
                      strides=(sb, sh * stride, sw * stride, sc, sh, sw),
                      writeable=False)


class Conv2d:
    """Strided valid 2-D convolution: (B, C_in, H, W) -> (B, C_out, Ho, Wo)."""

    def __init__(self, name: str, c_in: int, c_out: int, k: int, stride: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.k = k
        self.stride = stride
        self.c_in = c_in
        self.c_out = c_out
        fan_in = c_in * k * k
        self.W = Param(f"{name}.W", he_init(rng, (fan_in, c_out), fan_in, dtype))
        self.b = Param(f"{name}.b", np.zeros(c_out, dtype=dtype))

    def params(self) -> list[Param]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray):
        b, c, h, w = x.shape
        if h < self.k or w < self.k:
            raise ValueError(f"spatial input {h}x{w} smaller than kernel {self.k}")
        cols = _windows_2d(x, self.k, self.k, self.stride)   # (B,Ho,Wo,C,kh,kw)
        _, ho, wo = cols.shape[0], cols.shape[1], cols.shape[2]
        flat = cols.reshape(b * ho * wo, c * self.k * self.k)
        y = flat @ self.W.value + self.b.value
        y = y.reshape(b, ho, wo, self.c_out).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), (x, ho, wo)

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        x, ho, wo = cache
        b, c, h, w = x.shape
        dy_flat = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(b * ho * wo, self.c_out)
        cols = _windows_2d(x, self.k, self.k, self.stride)
        flat = cols.reshape(b * ho * wo, c * self.k * self.k)
        self.W.grad += flat.T @ dy_flat
        self.b.grad += dy_flat.sum(axis=0)
        dcols = (dy_flat @ self.W.value.T).reshape(b, ho, wo, c, self.k, self.k)
        dx = np.zeros_like(x)
        s = self.stride
        for i in range(self.k):
            for j in range(self.k):
                dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx


class AttentionPool:
    """Dimension-wise attention pooling of a (B, T, D) sequence to (B, D).

    A two-layer MLP maps each timestep to D scores; a softmax over time (per
    dimension) turns them into weights A with sum_t A[t, d] == 1, and the
    output is sum_t A[t] * X[t].  Invalid (padded) timesteps are masked out
    of the softmax so the result is independent of padding.
    """

    def __init__(self, name: str, d: int, rng: np.random.Generator, dtype=np.float32):
        self.d = d
        self.lin1 = Linear(f"{name}.mlp1", d, d, rng, dtype, init="xavier")
        self.lin2 = Linear(f"{name}.mlp2", d, d, rng, dtype, init="xavier")

    def params(self) -> list[Param]:
        return self.lin1.params() + self.lin2.params()

    def forward(self, x: np.ndarray, mask: np.ndarray | None = None):
        """x: (B, T, D); mask: (B, T) bool, True where the timestep is real."""
        b, t, d = x.shape
        if t < 1:
            raise ValueError("attention pooling requires at least one timestep")
        h_pre, c1 = self.lin1.forward(x)
        h = np.tanh(h_pre)
        logits, c2 = self.lin2.forward(h)
        if mask is not None:
            if not mask.any(axis=1).all():
                raise ValueError("every sequence needs at least one valid timestep")
            logits = np.where(mask[:, :, None], logits, -np.inf)
        logits = logits - logits.max(axis=1, keepdims=True)
        expw = np.exp(logits)
        weights = expw / expw.sum(axis=1, keepdims=True)     # (B, T, D)
        z = (weights * x).sum(axis=1)
        cache = (x, h, weights, c1, c2)
        return z, cache

    def backward(self, cache, dz: np.ndarray) -> np.ndarray:
        x, h, weights, c1, c2 = cache
        da = dz[:, None, :] * x                               # (B, T, D)
        dx = dz[:, None, :] * weights
        # softmax over the time axis, independently per dimension
        dlogits = weights * (da - (weights * da).sum(axis=1, keepdims=True))
        dh = self.lin2.backward(c2, dlogits)
        dh_pre = dh * (1.0 - h * h)
        dx += self.lin1.backward(c1, dh_pre)
        return dx


def l2_normalize(x: np.ndarray, eps: float = 1e-12):
    """Rows of x scaled to unit Euclidean norm."""
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    norm = np.maximum(norm, eps)
    y = x / norm
    return y, (y, norm)


def l2_normalize_backward(cache, dy: np.ndarray) -> np.ndarray:
    y, norm = cache
    return (dy - y * (y * dy).sum(axis=-1, keepdims=True)) / norm


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over rows; returns (loss, dlogits, probs)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    probs = expl / expl.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    eps = np.finfo(probs.dtype).tiny
    loss = -np.log(probs[np.arange(n), labels] + eps).mean()
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return float(loss), dlogits, probs
