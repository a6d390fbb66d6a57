"""Differentiable primitives on NCHW tensors.

Every function here returns a :class:`~letnet.tensor.Tensor` whose backward
rule is written out analytically.  Convolution and pooling share a "tap"
enumeration: for a kernel of ``kh x kw`` taps each tap contributes a strided
view of the padded input, so forward is a gather and backward a scatter-add.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, _record_macs, _record_pattern, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LN_EPS = 1e-5


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: tuple[int, int] = (1, 1)
    groups: int = 1
    bias: bool = False

    def __post_init__(self):
        for name in ("kernel", "stride", "padding", "dilation"):
            object.__setattr__(self, name, _pair(getattr(self, name)))
        if self.groups < 1:
            raise ConfigError(f"groups must be positive, got {self.groups}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"channels {self.in_channels}->{self.out_channels} not divisible by groups={self.groups}"
            )
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.dilation) < 1 or min(self.padding) < 0:
            raise ConfigError(f"invalid convolution geometry {self}")

    @property
    def depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        (kh, kw), (sh, sw), (ph, pw), (dh, dw) = self.kernel, self.stride, self.padding, self.dilation
        ho = (h + 2 * ph - dh * (kh - 1) - 1) // sh + 1
        wo = (w + 2 * pw - dw * (kw - 1) - 1) // sw + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"convolution {self.kernel} on {h}x{w} input gives empty output {ho}x{wo}")
        return ho, wo

    def param_count(self) -> int:
        kh, kw = self.kernel
        return kh * kw * self.in_channels * self.out_channels // self.groups + (self.out_channels if self.bias else 0)

    def macs(self, h: int, w: int) -> int:
        ho, wo = self.output_size(h, w)
        kh, kw = self.kernel
        return ho * wo * self.out_channels * kh * kw * self.in_channels // self.groups


def _tap_views(xp: np.ndarray, kernel, stride, dilation, out_hw):
    (kh, kw), (sh, sw), (dh, dw), (ho, wo) = kernel, stride, dilation, out_hw
    for i in range(kh):
        for j in range(kw):
            rows = slice(i * dh, i * dh + sh * (ho - 1) + 1, sh)
            cols = slice(j * dw, j * dw + sw * (wo - 1) + 1, sw)
            yield (Ellipsis, rows, cols)


def _pad(x: np.ndarray, ph: int, pw: int, value=0.0) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=value)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, *, stride=1, padding=0, dilation=1, groups=1) -> Tensor:
    """Cross-correlation with zero padding (grouped and dilated)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigError(f"conv2d expects NCHW input and 4-d weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    spec = ConvSpec(cin, cout, (kh, kw), stride, padding, dilation, groups, bias is not None)
    if cin_g * groups != cin:
        raise ConfigError(f"weight {weight.shape} expects {cin_g * groups} input channels, input has {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ConfigError(f"bias shape {bias.shape} != ({cout},)")
    ho, wo = spec.output_size(h, w)
    ph, pw = spec.padding
    xp = _pad(x.data, ph, pw)
    taps = list(_tap_views(xp, spec.kernel, spec.stride, spec.dilation, (ho, wo)))
    wd = weight.data.astype(x.dtype, copy=False)
    _record_macs("conv2d", n * spec.macs(h, w))

    if spec.depthwise and cin_g == 1:
        wk = wd.reshape(cout, kh * kw)
        out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
        for k, idx in enumerate(taps):
            out += xp[idx] * wk[:, k, None, None]
        if bias is not None:
            out += bias.data[:, None, None]

        def backward(g):
            gx = gw = gb = None
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for k, idx in enumerate(taps):
                    gxp[idx] += g * wk[:, k, None, None]
                gx = gxp[:, :, ph:ph + h, pw:pw + w]
            if weight.requires_grad:
                gw = np.stack([(g * xp[idx]).sum(axis=(0, 2, 3)) for idx in taps], axis=1).reshape(weight.shape)
            if bias is not None and bias.requires_grad:
                gb = g.sum(axis=(0, 2, 3))
            return gx, gw, gb

        return make_result(out, (x, weight) + ((bias,) if bias is not None else ()), backward)

    kk = kh * kw
    cout_g = cout // groups
    # cols: (N, G, Cin/G * K, L) ordered (channel, tap) to match the weight layout
    cols = np.stack([xp[idx] for idx in taps], axis=2).reshape(n, groups, cin_g * kk, ho * wo)
    wmat = wd.reshape(groups, cout_g, cin_g * kk)
    out = np.matmul(wmat[None], cols).reshape(n, cout, ho, wo)
    if bias is not None:
        out += bias.data[:, None, None]

    def backward(g):
        gx = gw = gb = None
        gr = g.reshape(n, groups, cout_g, ho * wo)
        if x.requires_grad:
            gcols = np.matmul(np.swapaxes(wmat, 1, 2)[None], gr).reshape(n, cin, kk, ho, wo)
            gxp = np.zeros_like(xp)
            for k, idx in enumerate(taps):
                gxp[idx] += gcols[:, :, k]
            gx = gxp[:, :, ph:ph + h, pw:pw + w]
        if weight.requires_grad:
            gw = np.matmul(gr, np.swapaxes(cols, 2, 3)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return make_result(out, (x, weight) + ((bias,) if bias is not None else ()), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ConfigError(f"linear: input features {x.shape[-1]} != weight in-features {weight.shape[1]}")
    wd = weight.data.astype(x.dtype, copy=False)
    out = x.data @ wd.T
    if bias is not None:
        out = out + bias.data
    _record_macs("linear", out.size * weight.shape[1])

    def backward(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1]) if weight.requires_grad else None
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias is not None else None
        return gx, gw, gb

    return make_result(out, (x, weight) + ((bias,) if bias is not None else ()), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalisation of an NCHW tensor.

    In training mode the batch statistics are used and the running buffers
    are updated in place (unbiased variance, as is customary).
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigError(f"batch_norm: affine parameters must have shape ({c},)")
    axes = (0, 2, 3)
    bshape = (1, c, 1, 1)
    dt = x.dtype.type
    if training:
        count = x.size // c
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * (count / max(count - 1, 1))
        running_mean *= 1 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= 1 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv_std = (1.0 / np.sqrt(var + dt(eps))).astype(x.dtype)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    gd = gamma.data.astype(x.dtype, copy=False)
    out = xhat * gd.reshape(bshape) + beta.data.astype(x.dtype, copy=False).reshape(bshape)

    def backward(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gb = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gd.reshape(bshape)
            if training:
                m = dt(x.size // c)
                gx = (inv_std.reshape(bshape) / m) * (
                    m * gxhat
                    - gxhat.sum(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
                )
            else:
                gx = gxhat * inv_std.reshape(bshape)
        return gx, gg, gb

    return make_result(out, (x, gamma, beta), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise over the last axis."""
    d = x.shape[-1]
    dt = x.dtype.type
    mean = x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(x.data.var(axis=-1, keepdims=True) + dt(eps))
    xhat = (x.data - mean) * inv_std
    gd = gamma.data.astype(x.dtype, copy=False)
    out = xhat * gd + beta.data.astype(x.dtype, copy=False)

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gd
            gx = (inv_std / dt(d)) * (
                dt(d) * gxhat - gxhat.sum(axis=-1, keepdims=True) - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
            )
        return gx, gg, gb

    return make_result(out, (x, gamma, beta), backward)


# -- activations ---------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _record_pattern(mask)
    return make_result(np.where(mask, x.data, x.dtype.type(0)), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_result(y, (x,), lambda g: (g * y * (1 - y),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), backward)


# -- pooling -------------------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    _record_macs("pool", n * c * h * w)
    return x.mean(axis=(2, 3), keepdims=True)


def global_max_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    _record_macs("pool", n * c * h * w)
    flat = x.data.reshape(n, c, h * w)
    arg = flat.argmax(axis=2)
    _record_pattern(arg)
    out = np.take_along_axis(flat, arg[..., None], axis=2).reshape(n, c, 1, 1)

    def backward(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, arg[..., None], g.reshape(n, c, 1), axis=2)
        return (gx.reshape(x.shape),)

    return make_result(out, (x,), backward)


def channel_pool(x: Tensor, kind: str) -> Tensor:
    """Average or max over the channel axis, giving an N x 1 x H x W map."""
    n, c, h, w = x.shape
    _record_macs("pool", n * c * h * w)
    if kind == "avg":
        return x.mean(axis=1, keepdims=True)
    if kind != "max":
        raise ConfigError(f"unknown pool kind {kind!r}")
    arg = x.data.argmax(axis=1)[:, None]
    _record_pattern(arg)
    out = np.take_along_axis(x.data, arg, axis=1)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg, g, axis=1)
        return (gx,)

    return make_result(out, (x,), backward)


def pool2d(x: Tensor, kind: str, kernel, stride=None) -> Tensor:
    """Windowed avg/max pooling without padding."""
    kernel = _pair(kernel)
    stride = _pair(stride) if stride is not None else kernel
    n, c, h, w = x.shape
    if kernel[0] > h or kernel[1] > w:
        raise ConfigError(f"pool window {kernel} larger than input {h}x{w}")
    ho = (h - kernel[0]) // stride[0] + 1
    wo = (w - kernel[1]) // stride[1] + 1
    taps = list(_tap_views(x.data, kernel, stride, (1, 1), (ho, wo)))
    kk = len(taps)
    _record_macs("pool", n * c * ho * wo * kk)
    stacked = np.stack([x.data[idx] for idx in taps], axis=0)
    if kind == "avg":
        out = stacked.mean(axis=0)

        def backward(g):
            gx = np.zeros_like(x.data)
            share = g / x.dtype.type(kk)
            for idx in taps:
                gx[idx] += share
            return (gx,)

    elif kind == "max":
        arg = stacked.argmax(axis=0)
        _record_pattern(arg)
        out = np.take_along_axis(stacked, arg[None], axis=0)[0]

        def backward(g):
            gx = np.zeros_like(x.data)
            for k, idx in enumerate(taps):
                gx[idx] += np.where(arg == k, g, 0)
            return (gx,)

    else:
        raise ConfigError(f"unknown pool kind {kind!r}")
    return make_result(out, (x,), backward)


def pool(x: Tensor, kind: str, window="global", stride=None) -> Tensor:
    """Dispatch: ``window`` is ``"global"``, ``"channel"`` or a kernel size."""
    if window == "global":
        if kind == "avg":
            return global_avg_pool(x)
        if kind == "max":
            return global_max_pool(x)
        raise ConfigError(f"unknown pool kind {kind!r}")
    if window == "channel":
        return channel_pool(x, kind)
    return pool2d(x, kind, window, stride)


# -- rearrangement -------------------------------------------------------------


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    if groups < 1 or channels % groups:
        raise ConfigError(f"channel_shuffle: {channels} channels not divisible by groups={groups}")
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    perm = shuffle_permutation(x.shape[1], groups)
    inverse = np.argsort(perm)
    return make_result(x.data[:, perm], (x,), lambda g: (g[:, inverse],))


def bilinear_matrix(in_size: int, out_size: int, dtype=np.float32) -> np.ndarray:
    """Interpolation weights (out_size x in_size), half-pixel centres."""
    if out_size < 1 or in_size < 1:
        raise ConfigError(f"resize extents must be positive, got {in_size}->{out_size}")
    scale = in_size / out_size
    m = np.zeros((out_size, in_size), dtype=np.float64)
    for o in range(out_size):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), in_size - 1)
        i1 = min(i0 + 1, in_size - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m.astype(dtype)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    n, c, h, w = x.shape
    ry = bilinear_matrix(h, out_h, x.dtype)
    rx = bilinear_matrix(w, out_w, x.dtype)
    out = ry @ x.data @ rx.T
    return make_result(out, (x,), lambda g: (ry.T @ g @ rx,))


__all__ = [
    "ConvSpec",
    "activation",
    "batch_norm",
    "bilinear_matrix",
    "channel_pool",
    "channel_shuffle",
    "conv2d",
    "global_avg_pool",
    "global_max_pool",
    "layer_norm",
    "linear",
    "pool",
    "pool2d",
    "relu",
    "resize_bilinear",
    "shuffle_permutation",
    "sigmoid",
    "softmax",
]
