"""The network's building blocks.

* :class:`LDB` - lightweight dilated bottleneck: a half-width factorised
  trunk, two depthwise branches (plain and dilated) each gated by channel
  attention, a 1x1 restore, a residual add and a channel shuffle.
* :class:`EfficientTransformer` - one pre-norm transformer block whose
  attention (:class:`EMHA`) runs at half width and attends only within
  contiguous token segments.
* :class:`FeatureEnhancement` - channel gate and spatial gate on a skip
  feature, fused residually.
* :class:`PixelAttention` - per-pixel, per-channel sigmoid gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError
from .nn import BatchNorm2d, ConvBN, LayerNorm, LayerRow, Linear, Module, Parameter, conv
from .tensor import Tensor, concat, matmul, split


@dataclass(frozen=True)
class LDBConfig:
    channels: int
    dilation: int = 1
    ca_kernel: int = 3
    groups: int | None = None  # channel shuffle groups, default channels // 2

    def __post_init__(self):
        if self.channels < 2 or self.channels % 2:
            raise ConfigError(f"LDB channels must be even and >= 2, got {self.channels}")
        if self.dilation < 1:
            raise ConfigError(f"LDB dilation must be >= 1, got {self.dilation}")
        if self.ca_kernel < 1 or self.ca_kernel % 2 == 0:
            raise ConfigError(f"channel-attention kernel must be odd, got {self.ca_kernel}")
        if self.channels % self.shuffle_groups:
            raise ConfigError(f"LDB channels {self.channels} not divisible by shuffle groups {self.shuffle_groups}")

    @property
    def shuffle_groups(self) -> int:
        return self.groups if self.groups is not None else self.channels // 2


@dataclass(frozen=True)
class EMHAConfig:
    channels: int
    heads: int = 8
    segments: int = 4
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.channels % 2:
            raise ConfigError(f"transformer channels must be even, got {self.channels}")
        if self.heads < 1 or self.reduced % self.heads:
            raise ConfigError(f"reduced width {self.reduced} not divisible by heads={self.heads}")
        if self.segments < 1 or self.mlp_ratio < 1:
            raise ConfigError("segments and mlp_ratio must be positive")

    @property
    def reduced(self) -> int:
        return self.channels // 2

    @property
    def head_dim(self) -> int:
        return self.reduced // self.heads


@dataclass(frozen=True)
class FEConfig:
    channels: int
    reduction: int = 4

    def __post_init__(self):
        if self.reduction < 1 or self.channels % self.reduction:
            raise ConfigError(f"FE channels {self.channels} not divisible by reduction {self.reduction}")


@dataclass(frozen=True)
class PAConfig:
    channels: int

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("PA channels must be >= 1")


class ChannelAttention(Module):
    """ECA-style gate: global average pool, 1-D conv across channels, sigmoid."""

    def __init__(self, kernel: int, rng: np.random.Generator):
        super().__init__()
        if kernel < 1 or kernel % 2 == 0:
            raise ConfigError(f"channel-attention kernel must be odd, got {kernel}")
        self.kernel = kernel
        self.weight = Parameter(rng.uniform(-1.0, 1.0, size=kernel) / math.sqrt(kernel))

    def gate(self, x: Tensor) -> Tensor:
        n, c = x.shape[:2]
        pooled = ops.global_avg_pool(x).reshape(n, 1, c, 1)
        w = self.weight.reshape(1, 1, self.kernel, 1)
        mixed = ops.conv2d(pooled, w, padding=(self.kernel // 2, 0))
        return ops.sigmoid(mixed).reshape(n, c, 1, 1)

    def forward(self, x: Tensor) -> Tensor:
        return x * self.gate(x)

    def param_count(self) -> int:
        return self.kernel

    def profile(self, shape, name):
        n, c, h, w = shape
        return [
            LayerRow(f"{name}.pool", "pool", 0, n * c * h * w),
            LayerRow(f"{name}.conv1d", "conv", self.kernel, n * c * self.kernel),
        ], shape


def channel_attention(x: Tensor, weight: Tensor) -> Tensor:
    """Functional form of :class:`ChannelAttention` for an explicit 1-D kernel."""
    k = weight.shape[0]
    if k % 2 == 0:
        raise ConfigError(f"channel-attention kernel must be odd, got {k}")
    n, c = x.shape[:2]
    pooled = ops.global_avg_pool(x).reshape(n, 1, c, 1)
    mixed = ops.conv2d(pooled, weight.reshape(1, 1, k, 1), padding=(k // 2, 0))
    return x * ops.sigmoid(mixed).reshape(n, c, 1, 1)


class LDB(Module):
    def __init__(self, cfg: LDBConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        c, half, r = cfg.channels, cfg.channels // 2, cfg.dilation
        self.reduce = ConvBN(ops.ConvSpec(c, half), rng)
        self.trunk_3x1 = conv(half, half, rng, kernel=(3, 1), padding=(1, 0))
        self.trunk_1x3 = ConvBN(ops.ConvSpec(half, half, (1, 3), padding=(0, 1)), rng)
        self.local_3x1 = conv(half, half, rng, kernel=(3, 1), padding=(1, 0), groups=half)
        self.local_1x3 = ConvBN(ops.ConvSpec(half, half, (1, 3), padding=(0, 1), groups=half), rng)
        self.local_ca = ChannelAttention(cfg.ca_kernel, rng)
        self.dilated_3x1 = conv(half, half, rng, kernel=(3, 1), padding=(r, 0), dilation=(r, 1), groups=half)
        self.dilated_1x3 = ConvBN(ops.ConvSpec(half, half, (1, 3), padding=(0, r), dilation=(1, r), groups=half), rng)
        self.dilated_ca = ChannelAttention(cfg.ca_kernel, rng)
        self.restore = ConvBN(ops.ConvSpec(half, c), rng, act=False)

    def _sequence(self):
        return [
            ("reduce", self.reduce), ("trunk_3x1", self.trunk_3x1), ("trunk_1x3", self.trunk_1x3),
            ("local_3x1", self.local_3x1), ("local_1x3", self.local_1x3), ("local_ca", self.local_ca),
            ("dilated_3x1", self.dilated_3x1), ("dilated_1x3", self.dilated_1x3), ("dilated_ca", self.dilated_ca),
            ("restore", self.restore),
        ]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cfg.channels:
            raise ConfigError(f"LDB expects {self.cfg.channels} channels, got {x.shape[1]}")
        f1 = self.trunk_1x3(self.trunk_3x1(self.reduce(x)))
        f21 = self.local_ca(self.local_1x3(self.local_3x1(f1)))
        f22 = self.dilated_ca(self.dilated_1x3(self.dilated_3x1(f1)))
        return ops.channel_shuffle(self.restore(f1 + f21 + f22) + x, self.cfg.shuffle_groups)

    def profile(self, shape, name):
        rows = []
        half_shape = (shape[0], shape[1] // 2, *shape[2:])
        for child_name, child in self._sequence():
            more, out = child.profile(shape if child_name == "reduce" else half_shape, f"{name}.{child_name}")
            rows += more
        return rows, out


def segmented_attention(q: Tensor, k: Tensor, v: Tensor, segments: int, return_weights: bool = False):
    """Scaled dot-product attention restricted to contiguous token segments.

    ``q``, ``k``, ``v`` are (B, heads, N, d).  Tokens are split into
    ``segments`` consecutive blocks of N/segments and each block attends
    only to itself; block outputs are concatenated in order.
    """
    b, h, n, d = q.shape
    if n % segments:
        raise ConfigError(f"token count {n} not divisible by segments={segments}")
    seg = n // segments
    shape = (b, h, segments, seg, d)
    qs, ks, vs = q.reshape(shape), k.reshape(shape), v.reshape(shape)
    scores = matmul(qs, ks.transpose(0, 1, 2, 4, 3)) * (1.0 / math.sqrt(d))
    weights = ops.softmax(scores, axis=-1)
    out = matmul(weights, vs).reshape(b, h, n, d)
    return (out, weights) if return_weights else out


class EMHA(Module):
    """Multi-head attention over segmented tokens at the reduced width."""

    def __init__(self, cfg: EMHAConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        dim = cfg.reduced
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)

    def forward(self, tokens: Tensor, return_weights: bool = False):
        squeeze = tokens.ndim == 2
        if squeeze:
            tokens = tokens.reshape(1, *tokens.shape)
        b, n, dim = tokens.shape
        cfg = self.cfg
        if dim != cfg.reduced:
            raise ConfigError(f"EMHA expects width {cfg.reduced}, got {dim}")
        if n % cfg.segments:
            raise ConfigError(f"token count {n} not divisible by segments={cfg.segments}")
        qkv = self.qkv(tokens).reshape(b, n, 3, cfg.heads, cfg.head_dim).transpose(2, 0, 3, 1, 4)
        q, k, v = (t.reshape(b, cfg.heads, n, cfg.head_dim) for t in split(qkv, 3, axis=0))
        attended, weights = segmented_attention(q, k, v, cfg.segments, return_weights=True)
        merged = attended.transpose(0, 2, 1, 3).reshape(b, n, dim)
        out = self.proj(merged)
        if squeeze:
            out = out.reshape(n, dim)
        return (out, weights) if return_weights else out

    def profile(self, shape, name):
        b, n, dim = shape
        rows, _ = self.qkv.profile(shape, f"{name}.qkv")
        seg = n // self.cfg.segments
        # Q K^T and weights @ V, each seg*seg*d per segment and head
        attn = 2 * self.cfg.segments * self.cfg.heads * seg * seg * self.cfg.head_dim
        rows.append(LayerRow(f"{name}.attention", "attention", 0, b * attn))
        more, out = self.proj.profile(shape, f"{name}.proj")
        return rows + more, out


class EfficientTransformer(Module):
    def __init__(self, cfg: EMHAConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.norm1 = LayerNorm(c)
        self.reduce = Linear(c, cfg.reduced, rng)
        self.attn = EMHA(cfg, rng)
        self.expand = Linear(cfg.reduced, c, rng)
        self.norm2 = LayerNorm(c)
        self.fc1 = Linear(c, cfg.mlp_ratio * c, rng)
        self.fc2 = Linear(cfg.mlp_ratio * c, c, rng)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.cfg.channels:
            raise ConfigError(f"transformer expects {self.cfg.channels} channels, got {c}")
        if (h * w) % self.cfg.segments:
            raise ConfigError(f"H*W={h * w} not divisible by segments={self.cfg.segments}")
        t = x.reshape(n, c, h * w).transpose(0, 2, 1)
        t = t + self.expand(self.attn(self.reduce(self.norm1(t))))
        t = t + self.fc2(ops.relu(self.fc1(self.norm2(t))))
        return t.transpose(0, 2, 1).reshape(n, c, h, w)

    def profile(self, shape, name):
        n, c, h, w = shape
        tokens = (n, h * w, c)
        rows = []
        reduced = (n, h * w, self.cfg.reduced)
        for child_name, child, s in [
            ("norm1", self.norm1, tokens), ("reduce", self.reduce, tokens), ("attn", self.attn, reduced),
            ("expand", self.expand, reduced), ("norm2", self.norm2, tokens), ("fc1", self.fc1, tokens),
            ("fc2", self.fc2, (n, h * w, self.cfg.mlp_ratio * c)),
        ]:
            more, _ = child.profile(s, f"{name}.{child_name}")
            rows += more
        return rows, shape


class FeatureEnhancement(Module):
    def __init__(self, cfg: FEConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        c, mid = cfg.channels, cfg.channels // cfg.reduction
        self.squeeze = conv(c, mid, rng, bias=True)
        self.excite = conv(mid, c, rng, bias=True)
        self.spatial = conv(2, 1, rng, kernel=3, padding=1)
        self.spatial_bn = BatchNorm2d(1)
        self.fuse_channel = conv(c, c, rng, bias=True)
        self.fuse_spatial = conv(c, c, rng, bias=True)

    def channel_gate(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.excite(ops.relu(self.squeeze(ops.global_avg_pool(x)))))

    def spatial_gate(self, x: Tensor) -> Tensor:
        pooled = concat([ops.channel_pool(x, "avg"), ops.channel_pool(x, "max")], axis=1)
        return ops.sigmoid(self.spatial_bn(self.spatial(pooled)))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cfg.channels:
            raise ConfigError(f"FE expects {self.cfg.channels} channels, got {x.shape[1]}")
        m_c = x * self.channel_gate(x)
        m_s = x * self.spatial_gate(x)
        return self.fuse_channel(m_c) + self.fuse_spatial(m_s) + x

    def profile(self, shape, name):
        n, c, h, w = shape
        rows = [LayerRow(f"{name}.avgpool", "pool", 0, n * c * h * w)]
        more, s = self.squeeze.profile((n, c, 1, 1), f"{name}.squeeze")
        rows += more
        more, _ = self.excite.profile(s, f"{name}.excite")
        rows += more
        rows.append(LayerRow(f"{name}.channel_pool", "pool", 0, 2 * n * c * h * w))
        more, s = self.spatial.profile((n, 2, h, w), f"{name}.spatial")
        rows += more
        more, _ = self.spatial_bn.profile(s, f"{name}.spatial_bn")
        rows += more
        for child_name in ("fuse_channel", "fuse_spatial"):
            more, _ = getattr(self, child_name).profile(shape, f"{name}.{child_name}")
            rows += more
        return rows, shape


class PixelAttention(Module):
    def __init__(self, cfg: PAConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.conv = conv(cfg.channels, cfg.channels, rng, bias=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.conv(x)) * x

    def profile(self, shape, name):
        return self.conv.profile(shape, f"{name}.conv")
