"""Hand-written forward/backward passes for 1-D conv nets, plus Adam.

Activations are plain ``numpy`` arrays shaped (batch, channels, length).
Every backward function takes the cache its forward returned. Nothing here
mutates its inputs except :func:`adam_step`, which updates parameters in
place.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateBatch,
    EmptyOutput,
    LabelOutOfRange,
    ShapeMismatch,
    WindowLargerThanInput,
)

_window = np.lib.stride_tricks.sliding_window_view


def _check3(x, name="x"):
    if x.ndim != 3:
        raise ShapeMismatch(f"{name} must be (N, C, L), got shape {x.shape}")


# ---------------------------------------------------------------- convolution

@dataclass
class Conv1dParams:
    weight: np.ndarray            # (out K, in C, kernel k)
    bias: np.ndarray | None = None  # (K,) or None
    stride: int = 1
    pad_left: int = 0
    pad_right: int = 0

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    def out_len(self, length: int) -> int:
        return (length + self.pad_left + self.pad_right - self.kernel) // self.stride + 1


def same_padding(k: int) -> tuple[int, int]:
    """Left/right zero padding that keeps length for stride 1 (extra on the right)."""
    return (k - 1) // 2, k // 2


def conv1d_forward(x, p: Conv1dParams):
    """Cross-correlation y[n,j,i] = sum_c,t w[j,c,t] * xpad[n,c,i*s+t] + b[j]."""
    _check3(x)
    K, C, k = p.weight.shape
    if x.shape[1] != C:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, conv expects {C}")
    if p.stride < 1 or k < 1:
        raise ShapeMismatch("stride and kernel must be >= 1")
    N, _, L = x.shape
    lout = p.out_len(L)
    if lout < 1:
        raise EmptyOutput(f"conv output length {lout} for input length {L}")
    xp = np.pad(x, ((0, 0), (0, 0), (p.pad_left, p.pad_right))) if p.pad_left or p.pad_right else x
    cols = _window(xp, k, axis=2)[:, :, : (lout - 1) * p.stride + 1 : p.stride, :]  # (N, C, Lout, k)
    cols = cols.transpose(0, 2, 1, 3).reshape(N * lout, C * k)  # im2col copy
    y = cols @ p.weight.reshape(K, C * k).T  # (N*Lout, K)
    y = np.ascontiguousarray(y.reshape(N, lout, K).transpose(0, 2, 1))
    if p.bias is not None:
        y += p.bias[None, :, None]
    return y, (x.shape, cols)


def conv1d_backward(cache, p: Conv1dParams, grad_out):
    """Returns (grad_x, grad_w, grad_b); grad_b is None for bias-free convs."""
    x_shape, cols = cache
    N, C, L = x_shape
    K, _, k = p.weight.shape
    lout = cols.shape[0] // N
    if grad_out.shape != (N, K, lout):
        raise ShapeMismatch(f"grad_out shape {grad_out.shape} != forward output {(N, K, lout)}")
    g2 = grad_out.transpose(0, 2, 1).reshape(N * lout, K)
    grad_w = (g2.T @ cols).reshape(K, C, k)
    grad_b = grad_out.sum(axis=(0, 2)) if p.bias is not None else None

    # grad wrt the padded input is a full correlation of the (stride-dilated)
    # output gradient with the flipped kernel
    s = p.stride
    lp = L + p.pad_left + p.pad_right
    span = (lout - 1) * s + 1
    if s == 1:
        gd = grad_out
    else:
        gd = np.zeros((N, K, span), dtype=grad_out.dtype)
        gd[:, :, ::s] = grad_out
    gpad = np.pad(gd, ((0, 0), (0, 0), (k - 1, lp - span)))
    win = _window(gpad, k, axis=2)[:, :, p.pad_left : p.pad_left + L, :]  # (N, K, L, k)
    win = win.transpose(0, 2, 1, 3).reshape(N * L, K * k)
    wflip = p.weight[:, :, ::-1].transpose(0, 2, 1).reshape(K * k, C)
    grad_x = (win @ wflip).reshape(N, L, C).transpose(0, 2, 1)
    return np.ascontiguousarray(grad_x), grad_w, grad_b


# --------------------------------------------------------- batch normalisation

@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def identity(cls, channels: int, dtype=np.float64) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
        )


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray  # (C,)
    gamma: np.ndarray
    train: bool
    # updated running statistics (train mode); the caller decides whether to keep them
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None


def batchnorm_forward(x, p: BatchNormParams, train: bool):
    """Per-channel normalisation over (N, L); biased variance in both modes."""
    _check3(x)
    C = x.shape[1]
    if p.gamma.shape != (C,):
        raise ShapeMismatch(f"batchnorm has {p.gamma.shape[0]} channels, input has {C}")
    if train:
        if x.shape[0] * x.shape[2] < 2:
            raise DegenerateBatch("train-mode batchnorm needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        m = p.momentum
        new_mean = (1 - m) * p.running_mean + m * mean
        new_var = (1 - m) * p.running_var + m * var
    else:
        mean, var = p.running_mean, p.running_var
        new_mean = new_var = None
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    y = p.gamma[None, :, None] * xhat + p.beta[None, :, None]
    return y, BatchNormCache(xhat, inv_std, p.gamma, train, new_mean, new_var)


def batchnorm_backward(cache: BatchNormCache, grad_out):
    if grad_out.shape != cache.xhat.shape:
        raise ShapeMismatch(f"grad_out shape {grad_out.shape} != {cache.xhat.shape}")
    xhat = cache.xhat
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2))
    grad_beta = grad_out.sum(axis=(0, 2))
    scale = (cache.gamma * cache.inv_std)[None, :, None]
    if not cache.train:
        return grad_out * scale, grad_gamma, grad_beta
    m = xhat.shape[0] * xhat.shape[2]
    grad_x = scale * (
        grad_out
        - grad_beta[None, :, None] / m
        - xhat * (grad_gamma[None, :, None] / m)
    )
    return grad_x, grad_gamma, grad_beta


# ------------------------------------------------------------------ activation

def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


# --------------------------------------------------------------------- pooling

def maxpool1d_forward(x, k: int, s: int):
    _check3(x)
    L = x.shape[2]
    if k > L:
        raise WindowLargerThanInput(f"pool window {k} exceeds input length {L}")
    lout = (L - k) // s + 1
    win = _window(x, k, axis=2)[:, :, : (lout - 1) * s + 1 : s, :]
    arg = win.argmax(axis=3)  # first index on ties
    y = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    return y, (x.shape, arg, k, s)


def maxpool1d_backward(cache, grad_out):
    x_shape, arg, k, s = cache
    if grad_out.shape != arg.shape:
        raise ShapeMismatch(f"grad_out shape {grad_out.shape} != {arg.shape}")
    grad_x = np.zeros(x_shape, dtype=grad_out.dtype)
    lout = arg.shape[2]
    span = (lout - 1) * s + 1
    for t in range(k):
        grad_x[:, :, t : t + span : s] += np.where(arg == t, grad_out, 0)
    return grad_x


def _adaptive_bins(L: int, H: int):
    return [(i * L // H, (i + 1) * L // H) for i in range(H)]


def adaptive_avgpool_forward(x, out_len: int):
    """Output bin i averages x[..., floor(i*L/H) : floor((i+1)*L/H)]."""
    _check3(x)
    L = x.shape[2]
    if not 1 <= out_len <= L:
        raise WindowLargerThanInput(f"cannot pool length {L} into {out_len} bins")
    if out_len == 1:
        return x.mean(axis=2, keepdims=True), (x.shape, out_len)
    y = np.stack([x[:, :, a:b].mean(axis=2) for a, b in _adaptive_bins(L, out_len)], axis=2)
    return y, (x.shape, out_len)


def adaptive_avgpool_backward(cache, grad_out):
    x_shape, H = cache
    N, C, L = x_shape
    if grad_out.shape != (N, C, H):
        raise ShapeMismatch(f"grad_out shape {grad_out.shape} != {(N, C, H)}")
    grad_x = np.empty(x_shape, dtype=grad_out.dtype)
    for i, (a, b) in enumerate(_adaptive_bins(L, H)):
        grad_x[:, :, a:b] = grad_out[:, :, i : i + 1] / (b - a)
    return grad_x


# ---------------------------------------------------------------------- linear

@dataclass
class LinearParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)


def linear_forward(x, p: LinearParams):
    if x.ndim != 2 or x.shape[1] != p.weight.shape[1]:
        raise ShapeMismatch(f"linear expects (N, {p.weight.shape[1]}), got {x.shape}")
    return x @ p.weight.T + p.bias


def linear_backward(x, p: LinearParams, grad_out):
    if grad_out.shape != (x.shape[0], p.weight.shape[0]):
        raise ShapeMismatch(f"grad_out shape {grad_out.shape} does not match linear output")
    return grad_out @ p.weight, grad_out.T @ x, grad_out.sum(axis=0)


# ---------------------------------------------------------------- classifier

def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    N, C = logits.shape
    if labels.shape != (N,):
        raise ShapeMismatch(f"need one label per row, got {labels.shape} for {N} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise LabelOutOfRange(f"labels must lie in [0, {C})")
    p = softmax(logits)
    rows = np.arange(N)
    loss = -np.mean(np.log(np.maximum(p[rows, labels], 1e-12)))
    grad = p.copy()
    grad[rows, labels] -= 1
    grad /= N
    return float(loss), grad


# ------------------------------------------------------------------------ Adam

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One bias-corrected Adam update of every array in ``params`` (in place)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        theta -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(theta.dtype, copy=False)
    return params
