"""Differentiable operations.

Broadcasting is deliberately narrow. Besides identical shapes and 0-d
scalars, a ``[B, C, H, W]`` operand may only meet a per-channel map
(``[C]``, ``[B|1, C|1, 1, 1]``) or a per-position map (``[H, W]``,
``[B|1, 1, H, W]``). Anything else raises ``ValueError``.
"""
from __future__ import annotations

from numbers import Number
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Function, Tensor

Padding = Union[int, Tuple[int, int]]


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Number):
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _align(a: Tensor, b: Tensor) -> Tuple[Tensor, Tensor]:
    """Validate the pair against the broadcast rules; reshape ``[C]`` maps."""
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return a, b
    swap = a.size < b.size
    big, small = (b, a) if swap else (a, b)
    ok = False
    if big.ndim == 4:
        B, C, H, W = big.shape
        s = small.shape
        if small.ndim == 1 and s[0] == C:
            small = reshape(small, (1, C, 1, 1))
            ok = True
        elif small.ndim == 2 and s == (H, W):
            ok = True
        elif small.ndim == 4 and s[0] in (1, B) and (
            (s[1] in (1, C) and s[2:] == (1, 1)) or (s[1] == 1 and s[2:] == (H, W))
        ):
            ok = True
    elif big.ndim == 2 and small.ndim == 1 and small.shape[0] == big.shape[1]:
        ok = True
    if not ok:
        raise ValueError(f"unsupported broadcast between shapes {a.shape} and {b.shape}")
    return (small, big) if swap else (big, small)


# ---------------------------------------------------------------------------
# elementwise arithmetic


class _Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class _Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(-g, self.shapes[1])


class _Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class _Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = g / self.b
        gb = -g * self.a / (self.b * self.b)
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    a, b = _align(a, _lift(b, a))
    return _Add.apply(a, b)


def sub(a, b) -> Tensor:
    like = a if isinstance(a, Tensor) else b
    a, b = _align(_lift(a, like), _lift(b, like))
    return _Sub.apply(a, b)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    a, b = _align(a, _lift(b, a))
    return _Mul.apply(a, b)


def div(a, b) -> Tensor:
    like = a if isinstance(a, Tensor) else b
    a, b = _align(_lift(a, like), _lift(b, like))
    return _Div.apply(a, b)


class _ScalarMul(Function):
    def forward(self, x, c):
        self.c = c
        return x * c

    def backward(self, g):
        return (g * self.c,)


def scalar_mul(x: Tensor, c: float) -> Tensor:
    return _ScalarMul.apply(x, c=float(c))


class _Relu(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, g):
        return (g * self.mask,)


def relu(x: Tensor) -> Tensor:
    return _Relu.apply(x)


class _Sigmoid(Function):
    def forward(self, x):
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1.0 + e)
        self.out = out
        return out

    def backward(self, g):
        return (g * self.out * (1.0 - self.out),)


def sigmoid(x: Tensor) -> Tensor:
    return _Sigmoid.apply(x)


class _Abs(Function):
    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, g):
        return (g * self.sign,)


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _Abs.apply(x)


class _Square(Function):
    def forward(self, x):
        self.x = x
        return x * x

    def backward(self, g):
        return (2.0 * g * self.x,)


def square(x: Tensor) -> Tensor:
    return _Square.apply(x)


class _PowScalar(Function):
    def forward(self, x, p):
        if np.any(x <= 0):
            raise ValueError("pow_scalar requires strictly positive input")
        self.x, self.p = x, p
        self.out = x ** p
        return self.out

    def backward(self, g):
        return (g * self.p * self.out / self.x,)


def pow_scalar(x: Tensor, p: float) -> Tensor:
    """``x ** p`` for strictly positive ``x``."""
    return _PowScalar.apply(x, p=float(p))


class _ClampMin(Function):
    def forward(self, x, lo):
        self.mask = x > lo
        return np.where(self.mask, x, lo).astype(x.dtype, copy=False)

    def backward(self, g):
        return (g * self.mask,)


def clamp_min(x: Tensor, lo: float) -> Tensor:
    return _ClampMin.apply(x, lo=float(lo))


# ---------------------------------------------------------------------------
# reductions and reshaping


class _Sum(Function):
    def forward(self, x, axis):
        self.shape, self.axis = x.shape, axis
        return np.asarray(x.sum(axis=axis))

    def backward(self, g):
        if self.axis is not None:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, self.shape).copy(),)


class _Mean(Function):
    def forward(self, x, axis):
        self.shape, self.axis = x.shape, axis
        self.n = x.size if axis is None else int(np.prod([x.shape[a] for a in axis]))
        return np.asarray(x.mean(axis=axis))

    def backward(self, g):
        if self.axis is not None:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g / self.n, self.shape).copy(),)


def sum(x: Tensor, axis: Optional[Sequence[int]] = None) -> Tensor:  # noqa: A001
    return _Sum.apply(x, axis=None if axis is None else tuple(axis))


def mean(x: Tensor, axis: Optional[Sequence[int]] = None) -> Tensor:
    return _Mean.apply(x, axis=None if axis is None else tuple(axis))


class _Reshape(Function):
    def forward(self, x, shape):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.in_shape),)


def reshape(x: Tensor, shape) -> Tensor:
    return _Reshape.apply(x, shape=tuple(shape))


def _require_4d(x: Tensor, name: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{name} expects a [B, C, H, W] tensor, got shape {x.shape}")


class _GlobalAvgPool(Function):
    def forward(self, x):
        self.shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, g):
        B, C, H, W = self.shape
        return (np.broadcast_to((g / (H * W))[:, :, None, None], self.shape).copy(),)


def global_avg_pool(x: Tensor) -> Tensor:
    """``[B, C, H, W] -> [B, C]``."""
    _require_4d(x, "global_avg_pool")
    return _GlobalAvgPool.apply(x)


class _Linear(Function):
    def forward(self, x, w, b=None):
        self.x, self.w, self.has_bias = x, w, b is not None
        out = x @ w.T
        return out + b if b is not None else out

    def backward(self, g):
        gx = g @ self.w
        gw = g.T @ self.x
        if self.has_bias:
            return gx, gw, g.sum(axis=0)
        return gx, gw


def fully_connected(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``[B, In] x [Out, In] (+ [Out]) -> [B, Out]``."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ValueError(f"fully_connected expects 2-D input/weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"in_features mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    args = (x, weight) if bias is None else (x, weight, bias)
    return _Linear.apply(*args)


class _Upsample2x(Function):
    def forward(self, x):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, g):
        B, C, H2, W2 = g.shape
        return (g.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5)),)


def upsample_nearest2x(x: Tensor) -> Tensor:
    _require_4d(x, "upsample_nearest2x")
    return _Upsample2x.apply(x)


class _AvgPool2x(Function):
    def forward(self, x):
        B, C, H, W = x.shape
        return x.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def backward(self, g):
        return (0.25 * g.repeat(2, axis=2).repeat(2, axis=3),)


def avg_pool2x(x: Tensor) -> Tensor:
    """2x2 mean pooling with stride 2; H and W must be even."""
    _require_4d(x, "avg_pool2x")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"avg_pool2x needs even H and W, got {x.shape[2:]}")
    return _AvgPool2x.apply(x)


# ---------------------------------------------------------------------------
# convolutions


def _pad_pair(padding: Padding) -> Tuple[int, int]:
    if isinstance(padding, (tuple, list)):
        lo, hi = int(padding[0]), int(padding[1])
    else:
        lo = hi = int(padding)
    if lo < 0 or hi < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")
    return lo, hi


def conv_output_size(n: int, k: int, stride: int, padding: Padding, dim: str = "H") -> int:
    lo, hi = _pad_pair(padding)
    span = n + lo + hi - k
    if span < 0:
        raise ValueError(f"kernel size {k} exceeds padded {dim} = {n + lo + hi}")
    if span % stride:
        raise ValueError(
            f"{dim}: (size {n} + padding {lo + hi} - kernel {k}) = {span} is not divisible by stride {stride}"
        )
    return span // stride + 1


class _Conv2d(Function):
    def forward(self, x, w, b=None, stride=1, padding=(0, 0)):
        B, Cin, H, W = x.shape
        Cout, _, k, _ = w.shape
        lo, hi = padding
        Ho = (H + lo + hi - k) // stride + 1
        Wo = (W + lo + hi - k) // stride + 1
        xp = np.pad(x, ((0, 0), (0, 0), (lo, hi), (lo, hi))) if lo or hi else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, Cin * k * k)
        wmat = w.reshape(Cout, -1)
        out = cols @ wmat.T
        if b is not None:
            out += b
        self.cols, self.wmat, self.has_bias = cols, wmat, b is not None
        self.geom = (B, Cin, H, W, Cout, k, Ho, Wo, lo, stride, xp.shape)
        return np.ascontiguousarray(out.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2))

    def backward(self, g):
        B, Cin, H, W, Cout, k, Ho, Wo, lo, s, xp_shape = self.geom
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, Cout)
        gw = (g2.T @ self.cols).reshape(Cout, Cin, k, k)
        dcols = (g2 @ self.wmat).reshape(B, Ho, Wo, Cin, k, k)
        gxp = np.zeros(xp_shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s] += dcols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, lo:lo + H, lo:lo + W]
        if self.has_bias:
            return gx, gw, g2.sum(axis=0)
        return gx, gw


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: Padding = 0) -> Tensor:
    """Cross-correlation of ``[B, Cin, H, W]`` with ``[Cout, Cin, k, k]``.

    ``padding`` is either symmetric (int) or ``(before, after)`` applied to
    both spatial axes. The padded extent minus ``k`` must divide by
    ``stride`` exactly.
    """
    _require_4d(x, "conv2d")
    if weight.ndim != 4:
        raise ValueError(f"conv2d weight must be [Cout, Cin, k, k], got {weight.shape}")
    Cout, Cin, kh, kw = weight.shape
    if kh != kw:
        raise ValueError(f"kernel must be square, got {kh}x{kw}")
    if x.shape[1] != Cin:
        raise ValueError(f"channel mismatch: input has Cin={x.shape[1]}, weight expects Cin={Cin}")
    if bias is not None and bias.shape != (Cout,):
        raise ValueError(f"bias shape {bias.shape} != (Cout={Cout},)")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    pad = _pad_pair(padding)
    conv_output_size(x.shape[2], kh, stride, pad, "H")
    conv_output_size(x.shape[3], kh, stride, pad, "W")
    args = (x, weight) if bias is None else (x, weight, bias)
    return _Conv2d.apply(*args, stride=int(stride), padding=pad)


class _DepthwiseConv2d(Function):
    def forward(self, x, w, b=None, padding=0):
        B, C, H, W = x.shape
        k = w.shape[-1]
        Ho, Wo = H + 2 * padding - k + 1, W + 2 * padding - k + 1
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        out = np.zeros((B, C, Ho, Wo), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                out += xp[:, :, i:i + Ho, j:j + Wo] * w[None, :, 0, i, j, None, None]
        if b is not None:
            out += b[None, :, None, None]
        self.xp, self.w, self.has_bias, self.padding = xp, w, b is not None, padding
        self.in_hw = (H, W)
        return out

    def backward(self, g):
        xp, w, p = self.xp, self.w, self.padding
        k = w.shape[-1]
        Ho, Wo = g.shape[2:]
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + Ho, j:j + Wo] += g * w[None, :, 0, i, j, None, None]
                gw[:, 0, i, j] = np.einsum("bchw,bchw->c", g, xp[:, :, i:i + Ho, j:j + Wo])
        H, W = self.in_hw
        gx = gxp[:, :, p:p + H, p:p + W]
        if self.has_bias:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, padding: Optional[int] = None) -> Tensor:
    """One ``k x k`` filter per channel (weight ``[C, 1, k, k]``), stride 1.

    ``padding`` defaults to ``(k - 1) // 2`` so spatial size is preserved.
    """
    _require_4d(x, "depthwise_conv2d")
    if weight.ndim != 4 or weight.shape[1] != 1:
        raise ValueError(f"depthwise weight must be [C, 1, k, k], got {weight.shape}")
    C, _, k, kw = weight.shape
    if k != kw:
        raise ValueError(f"kernel must be square, got {k}x{kw}")
    if x.shape[1] != C:
        raise ValueError(f"channel mismatch: input has C={x.shape[1]}, depthwise weight has C={C}")
    if bias is not None and bias.shape != (C,):
        raise ValueError(f"bias shape {bias.shape} != (C={C},)")
    if padding is None:
        padding = (k - 1) // 2
    conv_output_size(x.shape[2], k, 1, padding, "H")
    conv_output_size(x.shape[3], k, 1, padding, "W")
    args = (x, weight) if bias is None else (x, weight, bias)
    return _DepthwiseConv2d.apply(*args, padding=int(padding))


class _PointwiseConv2d(Function):
    def forward(self, x, w, b=None):
        B, Cin, H, W = x.shape
        Cout = w.shape[0]
        self.x3 = x.reshape(B, Cin, H * W)
        self.w2 = w.reshape(Cout, Cin)
        self.has_bias = b is not None
        out = np.matmul(self.w2, self.x3)
        if b is not None:
            out += b[None, :, None]
        return out.reshape(B, Cout, H, W)

    def backward(self, g):
        B, Cout, H, W = g.shape
        g3 = g.reshape(B, Cout, H * W)
        gx = np.matmul(self.w2.T, g3).reshape(B, -1, H, W)
        gw = np.einsum("bop,bcp->oc", g3, self.x3).reshape(Cout, -1, 1, 1)
        if self.has_bias:
            return gx, gw, g3.sum(axis=(0, 2))
        return gx, gw


def pointwise_conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """1x1 channel mixing; identical to ``conv2d`` with ``k = 1``."""
    _require_4d(x, "pointwise_conv2d")
    if weight.ndim != 4 or weight.shape[2:] != (1, 1):
        raise ValueError(f"pointwise weight must be [Cout, Cin, 1, 1], got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"channel mismatch: input has Cin={x.shape[1]}, weight expects Cin={weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"bias shape {bias.shape} != (Cout={weight.shape[0]},)")
    args = (x, weight) if bias is None else (x, weight, bias)
    return _PointwiseConv2d.apply(*args)


# ---------------------------------------------------------------------------
# batch normalisation

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class _BatchNormTrain(Function):
    def forward(self, x, gamma, beta, eps):
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        self.xhat, self.inv, self.gamma = xhat, inv, gamma
        self.batch_mean, self.batch_var = mu.reshape(-1), var.reshape(-1)
        return xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, g):
        xhat, inv = self.xhat, self.inv
        n = g.shape[0] * g.shape[2] * g.shape[3]
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gxhat = g * self.gamma[None, :, None, None]
        gx = inv / n * (
            n * gxhat
            - gxhat.sum(axis=(0, 2, 3), keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        )
        return gx, ggamma, gbeta


class _BatchNormEval(Function):
    def forward(self, x, gamma, beta, mean, var, eps):
        inv = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        self.scale = (gamma * inv)[None, :, None, None]
        return self.xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, g):
        return g * self.scale, (g * self.xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalisation over (B, H, W).

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance); in eval mode
    the running statistics are used.
    """
    _require_4d(x, "batchnorm2d")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"gamma/beta must have shape ({C},), got {gamma.shape}, {beta.shape}")
    if not training:
        return _BatchNormEval.apply(x, gamma, beta, mean=running_mean, var=running_var, eps=eps)
    n = x.shape[0] * x.shape[2] * x.shape[3]
    if n < 2:
        raise ValueError(f"batchnorm2d in training mode needs B*H*W >= 2 per channel, got {n}")
    out = _BatchNormTrain.apply(x, gamma, beta, eps=eps)
    node = out._node
    if node is None:
        # graph recording disabled; recompute statistics directly
        bm = x.data.mean(axis=(0, 2, 3))
        bv = x.data.var(axis=(0, 2, 3))
    else:
        bm, bv = node.batch_mean, node.batch_var
    running_mean *= 1.0 - momentum
    running_mean += momentum * bm
    running_var *= 1.0 - momentum
    running_var += momentum * bv * n / (n - 1)
    return out


# ---------------------------------------------------------------------------
# fixed filtering (SSIM windows)


class _SeparableFilterValid(Function):
    def forward(self, x, taps):
        self.taps, self.in_shape = taps, x.shape
        k = len(taps)
        H, W = x.shape[-2:]
        Ho, Wo = H - k + 1, W - k + 1
        tmp = np.zeros(x.shape[:-1] + (Wo,), dtype=x.dtype)
        for t in range(k):
            tmp += taps[t] * x[..., :, t:t + Wo]
        out = np.zeros(x.shape[:-2] + (Ho, Wo), dtype=x.dtype)
        for t in range(k):
            out += taps[t] * tmp[..., t:t + Ho, :]
        return out

    def backward(self, g):
        taps = self.taps
        k = len(taps)
        H, W = self.in_shape[-2:]
        Ho, Wo = g.shape[-2:]
        gtmp = np.zeros(g.shape[:-2] + (H, Wo), dtype=g.dtype)
        for t in range(k):
            gtmp[..., t:t + Ho, :] += taps[t] * g
        gx = np.zeros(self.in_shape, dtype=g.dtype)
        for t in range(k):
            gx[..., :, t:t + Wo] += taps[t] * gtmp
        return (gx,)


def separable_filter_valid(x: Tensor, taps: np.ndarray) -> Tensor:
    """Correlate each plane with ``outer(taps, taps)``, no padding."""
    _require_4d(x, "separable_filter_valid")
    taps = np.asarray(taps, dtype=x.dtype)
    k = len(taps)
    if x.shape[2] < k or x.shape[3] < k:
        raise ValueError(f"input {x.shape[2]}x{x.shape[3]} smaller than filter window {k}")
    return _SeparableFilterValid.apply(x, taps=taps)


# ---------------------------------------------------------------------------
# 2-D discrete Fourier transform (unnormalised, per plane)


class _DFTReal(Function):
    def forward(self, x):
        return np.ascontiguousarray(np.fft.fft2(x, axes=(-2, -1)).real.astype(x.dtype, copy=False))

    def backward(self, g):
        H, W = g.shape[-2:]
        return ((H * W * np.fft.ifft2(g, axes=(-2, -1))).real.astype(g.dtype, copy=False),)


class _DFTImag(Function):
    def forward(self, x):
        return np.ascontiguousarray(np.fft.fft2(x, axes=(-2, -1)).imag.astype(x.dtype, copy=False))

    def backward(self, g):
        H, W = g.shape[-2:]
        return ((-H * W * np.fft.ifft2(g, axes=(-2, -1))).imag.astype(g.dtype, copy=False),)


def dft2d(x: Tensor) -> Tuple[Tensor, Tensor]:
    """Forward 2-D DFT over the last two axes; returns ``(real, imag)``."""
    _require_4d(x, "dft2d")
    return _DFTReal.apply(x), _DFTImag.apply(x)
