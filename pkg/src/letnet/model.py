"""Full network assembly and the ablation presets.

Topology (H x W input)::

    stem 3x3/2 ─ stage1 (LDB x n1 @ c1, H/2) ─ down ─ stage2 (@ c2, H/4) ─ down
      ─ stage3 (@ c3, H/8) ─ [transformer] ─ (+L3) ─ up ─ (+L2) ─ up ─ (+L1)
      ─ [pixel attention] ─ 1x1 classifier ─ bilinear to H x W

Each skip ``L1..L3`` is ``off``, ``plain`` (1x1 conv then add) or ``fe``
(feature enhancement, 1x1 conv, add).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .blocks import (
    LDB,
    EMHAConfig,
    EfficientTransformer,
    FEConfig,
    FeatureEnhancement,
    LDBConfig,
    PAConfig,
    PixelAttention,
)
from .errors import ConfigError
from .nn import BatchNorm2d, ConvBN, LayerRow, Module, conv, profile_sequence
from .tensor import Tensor, concat, no_grad

SKIP_MODES = ("off", "plain", "fe")


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 19
    channels: tuple[int, int, int] = (32, 64, 128)
    depths: tuple[int, int, int] = (3, 3, 14)
    dilations: tuple[int, ...] | None = None
    decoder_depths: tuple[int, int] = (0, 0)
    transformer: bool = True
    skips: tuple[str, str, str] = ("fe", "fe", "fe")
    pixel_attention: bool = True
    heads: int = 8
    segments: int = 4
    mlp_ratio: int = 2
    fe_reduction: int = 4
    ca_kernel: int = 3
    resolution: tuple[int, int] = (512, 1024)

    def __post_init__(self):
        for name in ("channels", "depths", "decoder_depths", "skips", "resolution"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.dilations is not None:
            object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        self.validate()

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ConfigError(f"model.num_classes must be >= 1, got {self.num_classes}")
        if len(self.channels) != 3 or any(c < 2 or c % 2 for c in self.channels):
            raise ConfigError(f"model.channels must be three even widths, got {self.channels}")
        c1, c2, c3 = self.channels
        if not (c1 < c2 < c3):
            raise ConfigError(f"model.channels must strictly increase, got {self.channels}")
        if len(self.depths) != 3 or any(d < 0 for d in self.depths):
            raise ConfigError(f"model.depths must be three non-negative counts, got {self.depths}")
        if len(self.decoder_depths) != 2 or any(d < 0 for d in self.decoder_depths):
            raise ConfigError(f"model.decoder_depths must be two non-negative counts, got {self.decoder_depths}")
        if len(self.dilation_schedule) != sum(self.depths):
            raise ConfigError(
                f"model.dilations has {len(self.dilation_schedule)} entries, expected n1+n2+n3={sum(self.depths)}"
            )
        if any(d < 1 for d in self.dilation_schedule):
            raise ConfigError("model.dilations entries must be >= 1")
        if len(self.skips) != 3 or any(s not in SKIP_MODES for s in self.skips):
            raise ConfigError(f"model.skips must be three of {SKIP_MODES}, got {self.skips}")
        if len(self.resolution) != 2 or min(self.resolution) < 1:
            raise ConfigError(f"model.resolution must be two positive extents, got {self.resolution}")
        for c in self.channels:
            LDBConfig(c, 1, self.ca_kernel)
        if self.transformer:
            EMHAConfig(c3, self.heads, self.segments, self.mlp_ratio)
        if "fe" in self.skips:
            for c, mode in zip(self.channels, self.skips):
                if mode == "fe":
                    FEConfig(c, self.fe_reduction)

    @property
    def dilation_schedule(self) -> tuple[int, ...]:
        if self.dilations is not None:
            return self.dilations
        n1, n2, n3 = self.depths
        cycle = (1, 2, 4, 8)
        return (1,) * (n1 + n2) + tuple(cycle[i % 4] for i in range(n3))

    def emha(self) -> EMHAConfig:
        return EMHAConfig(self.channels[2], self.heads, self.segments, self.mlp_ratio)

    def check_input(self, h: int, w: int) -> None:
        if h % 8 or w % 8:
            raise ConfigError(f"input {h}x{w}: height and width must be multiples of 8")
        if self.transformer and ((h // 8) * (w // 8)) % self.segments:
            raise ConfigError(
                f"input {h}x{w}: (H/8)*(W/8)={(h // 8) * (w // 8)} must be a multiple of segments={self.segments}"
            )


# ablation rows: (transformer, skips, pixel_attention)
ABLATIONS: dict[str, tuple[bool, tuple[str, str, str], bool]] = {
    "baseline": (False, ("off", "off", "off"), False),
    "A1": (False, ("plain", "off", "off"), False),
    "A2": (False, ("plain", "plain", "off"), False),
    "A3": (False, ("plain", "plain", "plain"), False),
    "B1": (False, ("fe", "off", "off"), False),
    "B2": (False, ("fe", "fe", "off"), False),
    "B3": (False, ("fe", "fe", "fe"), False),
    "C1": (True, ("off", "off", "off"), False),
    "C2": (True, ("fe", "fe", "fe"), False),
    "C3": (True, ("fe", "fe", "fe"), True),
}

TINY = dict(num_classes=3, channels=(8, 16, 32), depths=(1, 1, 2), heads=2, resolution=(64, 64))


def ablation_config(row: str, **overrides) -> ModelConfig:
    """ModelConfig for an ablation row (``baseline``, ``A1`` ... ``C3``)."""
    key = "baseline" if row.lower() == "baseline" else row.upper()
    if key not in ABLATIONS:
        raise ConfigError(f"unknown ablation row {row!r}; expected one of {', '.join(ABLATIONS)}")
    transformer, skips, pa = ABLATIONS[key]
    base = dict(transformer=transformer, skips=skips, pixel_attention=pa)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_config(**overrides) -> ModelConfig:
    base = dict(TINY)
    base.update(overrides)
    return ModelConfig(**base)


class Downsample(Module):
    """Strided 3x3 conv concatenated with 2x2 max-pool, then BN and ReLU."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.conv = conv(cin, cout - cin, rng, kernel=3, stride=2, padding=1)
        self.bn = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        y = concat([self.conv(x), ops.pool2d(x, "max", 2)], axis=1)
        return ops.relu(self.bn(y))

    def profile(self, shape, name):
        n, c, h, w = shape
        rows, out = self.conv.profile(shape, f"{name}.conv")
        rows.append(LayerRow(f"{name}.maxpool", "pool", 0, n * c * (h // 2) * (w // 2) * 4))
        out = (n, self.cout, out[2], out[3])
        more, out = self.bn.profile(out, f"{name}.bn")
        return rows + more, out


class Upsample(Module):
    """3x3 conv (BN, ReLU) changing the width, then bilinear x2."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.block = ConvBN(ops.ConvSpec(cin, cout, 3, padding=1), rng)

    def forward(self, x: Tensor) -> Tensor:
        y = self.block(x)
        return ops.resize_bilinear(y, 2 * y.shape[2], 2 * y.shape[3])

    def profile(self, shape, name):
        rows, (n, c, h, w) = self.block.profile(shape, f"{name}.block")
        return rows, (n, c, 2 * h, 2 * w)


class Skip(Module):
    """Long skip: optional feature enhancement, then a 1x1 projection."""

    def __init__(self, channels: int, mode: str, fe_reduction: int, rng: np.random.Generator):
        super().__init__()
        self.mode = mode
        if mode == "fe":
            self.fe = FeatureEnhancement(FEConfig(channels, fe_reduction), rng)
        self.proj = conv(channels, channels, rng, bias=True)

    def forward(self, x: Tensor) -> Tensor:
        if self.mode == "fe":
            x = self.fe(x)
        return self.proj(x)

    def profile(self, shape, name):
        rows = []
        if self.mode == "fe":
            rows, shape = self.fe.profile(shape, f"{name}.fe")
        more, shape = self.proj.profile(shape, f"{name}.proj")
        return rows + more, shape


class Stage(Module):
    def __init__(self, channels: int, dilations, ca_kernel: int, rng: np.random.Generator):
        super().__init__()
        self.count = len(dilations)
        for i, d in enumerate(dilations):
            setattr(self, f"ldb{i}", LDB(LDBConfig(channels, d, ca_kernel), rng))

    def blocks(self) -> list[tuple[str, Module]]:
        return [(f"ldb{i}", getattr(self, f"ldb{i}")) for i in range(self.count)]

    def forward(self, x: Tensor) -> Tensor:
        for _, block in self.blocks():
            x = block(x)
        return x

    def profile(self, shape, name):
        return profile_sequence(self.blocks(), shape, name)


class LETNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        c1, c2, c3 = cfg.channels
        n1, n2, n3 = cfg.depths
        dil = cfg.dilation_schedule
        self.stem = ConvBN(ops.ConvSpec(3, c1, 3, stride=2, padding=1), rng)
        self.stage1 = Stage(c1, dil[:n1], cfg.ca_kernel, rng)
        self.down1 = Downsample(c1, c2, rng)
        self.stage2 = Stage(c2, dil[n1:n1 + n2], cfg.ca_kernel, rng)
        self.down2 = Downsample(c2, c3, rng)
        self.stage3 = Stage(c3, dil[n1 + n2:], cfg.ca_kernel, rng)
        if cfg.transformer:
            self.transformer = EfficientTransformer(cfg.emha(), rng)
        for i, (c, mode) in enumerate(zip(cfg.channels, cfg.skips), start=1):
            if mode != "off":
                setattr(self, f"skip{i}", Skip(c, mode, cfg.fe_reduction, rng))
        self.up2 = Upsample(c3, c2, rng)
        self.dec2 = Stage(c2, (1,) * cfg.decoder_depths[1], cfg.ca_kernel, rng)
        self.up1 = Upsample(c2, c1, rng)
        self.dec1 = Stage(c1, (1,) * cfg.decoder_depths[0], cfg.ca_kernel, rng)
        if cfg.pixel_attention:
            self.pa = PixelAttention(PAConfig(c1), rng)
        self.classifier = conv(c1, cfg.num_classes, rng, bias=True)

    def _skip(self, index: int) -> Skip | None:
        return self._children.get(f"skip{index}")

    def forward(self, images: Tensor) -> Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ConfigError(f"expected N x 3 x H x W images, got shape {images.shape}")
        h, w = images.shape[2:]
        self.cfg.check_input(h, w)
        s1 = self.stage1(self.stem(images))
        s2 = self.stage2(self.down1(s1))
        s3 = self.stage3(self.down2(s2))
        x = self.transformer(s3) if self.cfg.transformer else s3
        for index, feature, up, dec in ((3, s3, self.up2, self.dec2), (2, s2, self.up1, self.dec1)):
            skip = self._skip(index)
            if skip is not None:
                x = x + skip(feature)
            x = dec(up(x))
        skip = self._skip(1)
        if skip is not None:
            x = x + skip(s1)
        if self.cfg.pixel_attention:
            x = self.pa(x)
        return ops.resize_bilinear(self.classifier(x), h, w)

    def predict(self, images: Tensor) -> np.ndarray:
        """Eval-mode argmax labels, N x H x W."""
        was_training = self.training
        self.eval()
        with no_grad():
            logits = self.forward(images)
        self.train(was_training)
        return logits.data.argmax(axis=1)

    def profile(self, shape, name=""):
        """Static per-layer rows for an input of ``shape`` (N, 3, H, W)."""
        self.cfg.check_input(shape[2], shape[3])
        rows: list[LayerRow] = []

        def run(label, module, s):
            more, out = module.profile(s, label)
            rows.extend(more)
            return out

        x = run("stem", self.stem, shape)
        s1 = x = run("stage1", self.stage1, x)
        x = run("down1", self.down1, x)
        s2 = x = run("stage2", self.stage2, x)
        x = run("down2", self.down2, x)
        s3 = x = run("stage3", self.stage3, x)
        if self.cfg.transformer:
            x = run("transformer", self.transformer, x)
        if self._skip(3) is not None:
            run("skip3", self._skip(3), s3)
        x = run("up2", self.up2, x)
        x = run("dec2", self.dec2, x)
        if self._skip(2) is not None:
            run("skip2", self._skip(2), s2)
        x = run("up1", self.up1, x)
        x = run("dec1", self.dec1, x)
        if self._skip(1) is not None:
            run("skip1", self._skip(1), s1)
        if self.cfg.pixel_attention:
            x = run("pa", self.pa, x)
        run("classifier", self.classifier, x)
        return rows, (shape[0], self.cfg.num_classes, shape[2], shape[3])


def build(cfg: ModelConfig, seed: int = 0) -> LETNet:
    return LETNet(cfg, seed)


def forward(model: LETNet, images: Tensor) -> Tensor:
    return model(images)


__all__ = [
    "ABLATIONS",
    "LETNet",
    "ModelConfig",
    "ablation_config",
    "build",
    "forward",
    "tiny_config",
]
