"""Image and label I/O, dataset loading and the synthetic shapes dataset.

Images are binary PPM (P6, maxval 255) read as float32 3 x H x W in [0, 1];
labels are binary PGM (P5, maxval 255) whose gray values are class indices.
A dataset root looks like::

    root/
      images/<stem>.ppm
      labels/<stem>.pgm
      train.txt  val.txt  test.txt     # one stem per line
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

IGNORE_INDEX = 255


@dataclass
class LabelMap:
    labels: np.ndarray
    num_classes: int
    ignore_index: int = IGNORE_INDEX

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise DataError(f"label map must be H x W, got shape {self.labels.shape}")
        bad = (self.labels != self.ignore_index) & ((self.labels < 0) | (self.labels >= self.num_classes))
        if bad.any():
            y, x = (int(v) for v in np.argwhere(bad)[0])
            raise DataError(
                f"label {int(self.labels[y, x])} at (y={y}, x={x}) outside [0, {self.num_classes}) "
                f"and not ignore value {self.ignore_index}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


# -- portable pixmaps -----------------------------------------------------------


def _parse_header(raw: bytes, magic: bytes, source: str) -> tuple[int, int, int]:
    """Return (width, height, payload offset); maxval must be 255."""
    if len(raw) < 2 or raw[:2] != magic:
        raise DataError(f"{source}: bad magic {raw[:2]!r}, expected {magic!r} at byte 0")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and (raw[pos:pos + 1].isspace() or raw[pos:pos + 1] == b"#"):
            if raw[pos:pos + 1] == b"#":
                end = raw.find(b"\n", pos)
                pos = len(raw) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(raw) and raw[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise DataError(f"{source}: expected an integer header field at byte {start}")
        fields.append(int(raw[start:pos]))
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise DataError(f"{source}: missing whitespace after header at byte {pos}")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise DataError(f"{source}: non-positive size {width}x{height}")
    if maxval != 255:
        raise DataError(f"{source}: maxval {maxval} unsupported, only 255")
    return width, height, pos


def decode_ppm(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    width, height, offset = _parse_header(raw, b"P6", source)
    need = width * height * 3
    if len(raw) - offset < need:
        raise DataError(f"{source}: truncated payload, {len(raw) - offset} of {need} bytes after byte {offset}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=need, offset=offset).reshape(height, width, 3)
    return (pixels.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def encode_ppm(image) -> bytes:
    arr = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DataError(f"image must be 3 x H x W, got {arr.shape}")
    pixels = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    _, h, w = arr.shape
    return f"P6\n{w} {h}\n255\n".encode() + pixels.tobytes()


def read_image(path: str | Path) -> np.ndarray:
    """Read a P6 file into a float32 3 x H x W array in [0, 1]."""
    return decode_ppm(Path(path).read_bytes(), str(path))


def write_image(image, path: str | Path) -> None:
    Path(path).write_bytes(encode_ppm(image))


def decode_pgm(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    width, height, offset = _parse_header(raw, b"P5", source)
    need = width * height
    if len(raw) - offset < need:
        raise DataError(f"{source}: truncated payload, {len(raw) - offset} of {need} bytes after byte {offset}")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=offset).reshape(height, width).astype(np.int64)


def encode_pgm(labels) -> bytes:
    arr = np.asarray(getattr(labels, "labels", labels))
    if arr.ndim != 2:
        raise DataError(f"label map must be H x W, got {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise DataError("label values must fit in 0..255 for P5 output")
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode() + arr.astype(np.uint8).tobytes()


def read_labels(path: str | Path, num_classes: int, ignore_index: int = IGNORE_INDEX) -> LabelMap:
    raw = decode_pgm(Path(path).read_bytes(), str(path))
    try:
        return LabelMap(raw, num_classes, ignore_index)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_labels(labels, path: str | Path) -> None:
    Path(path).write_bytes(encode_pgm(labels))


# -- palettes -------------------------------------------------------------------

CITYSCAPES_COLORS = [
    (128, 64, 128), (244, 35, 232), (70, 70, 70), (102, 102, 156), (190, 153, 153),
    (153, 153, 153), (250, 170, 30), (220, 220, 0), (107, 142, 35), (152, 251, 152),
    (70, 130, 180), (220, 20, 60), (255, 0, 0), (0, 0, 142), (0, 0, 70),
    (0, 60, 100), (0, 80, 100), (0, 0, 230), (119, 11, 32),
]


@dataclass
class Palette:
    colors: list[tuple[int, int, int]]
    ignore_color: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        self.colors = [tuple(int(v) for v in c) for c in self.colors]
        if len(set(self.colors)) != len(self.colors):
            raise ConfigError("palette colours must be unique")

    @classmethod
    def default(cls, num_classes: int) -> Palette:
        if num_classes <= len(CITYSCAPES_COLORS):
            return cls(CITYSCAPES_COLORS[:num_classes])
        rng = np.random.default_rng(num_classes)
        colors: list[tuple[int, int, int]] = list(CITYSCAPES_COLORS)
        while len(colors) < num_classes:
            c = tuple(int(v) for v in rng.integers(0, 256, 3))
            if c not in colors and c != (0, 0, 0):
                colors.append(c)
        return cls(colors)


def colorize(labels, palette: Palette, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Exact palette lookup, returning float32 3 x H x W in [0, 1]."""
    arr = np.asarray(getattr(labels, "labels", labels))
    if isinstance(labels, LabelMap):
        ignore_index = labels.ignore_index
    valid = arr != ignore_index
    if valid.any() and (arr[valid].min() < 0 or arr[valid].max() >= len(palette.colors)):
        bad = int(arr[valid][(arr[valid] < 0) | (arr[valid] >= len(palette.colors))][0])
        raise ConfigError(f"class {bad} not covered by a palette of {len(palette.colors)} colours")
    table = np.array(palette.colors + [palette.ignore_color], dtype=np.float32) / np.float32(255.0)
    index = np.where(valid, arr, len(palette.colors))
    return table[index].transpose(2, 0, 1)


def decolorize(image, palette: Palette, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Inverse lookup of :func:`colorize`; unknown colours raise."""
    rgb = np.rint(np.asarray(image) * 255.0).astype(np.int64).transpose(1, 2, 0)
    keys = rgb[..., 0] * 65536 + rgb[..., 1] * 256 + rgb[..., 2]
    lookup = {r * 65536 + g * 256 + b: i for i, (r, g, b) in enumerate(palette.colors)}
    out = np.full(keys.shape, -1, dtype=np.int64)
    for key, cls in lookup.items():
        out[keys == key] = cls
    ir, ig, ib = palette.ignore_color
    out[(keys == ir * 65536 + ig * 256 + ib) & (out < 0)] = ignore_index
    if (out < 0).any():
        y, x = (int(v) for v in np.argwhere(out < 0)[0])
        raise DataError(f"colour at (y={y}, x={x}) not in palette")
    return out


# -- datasets -------------------------------------------------------------------


@dataclass
class Sample:
    stem: str
    image: np.ndarray
    labels: np.ndarray
    shapes: list = field(default_factory=list)

    def __getitem__(self, i):
        # lets a Sample be used where an (image, labels) pair is expected
        return (self.image, self.labels)[i]

    def __len__(self):
        return 2


def normalize(image: np.ndarray, mean=None, std=None) -> np.ndarray:
    if mean is None and std is None:
        return image
    m = np.asarray(mean if mean is not None else (0.0, 0.0, 0.0), dtype=np.float32).reshape(3, 1, 1)
    s = np.asarray(std if std is not None else (1.0, 1.0, 1.0), dtype=np.float32).reshape(3, 1, 1)
    return (image - m) / s


@dataclass
class SplitDataset:
    root: Path
    splits: dict[str, list[Sample]]

    def counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.splits.items()}

    def __len__(self) -> int:
        return sum(self.counts().values())


def _read_split_file(path: Path) -> list[str]:
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 text (byte {exc.start})") from None
    stems = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        stem = line.strip()
        if not stem:
            continue
        if "/" in stem or "\\" in stem or " " in stem:
            raise DataError(f"{path}:{lineno}: malformed stem {stem!r}")
        stems.append(stem)
    return stems


def load_camvid_dir(
    root: str | Path,
    num_classes: int = 11,
    ignore_index: int = IGNORE_INDEX,
    splits: tuple[str, ...] = ("train", "val", "test"),
    mean=None,
    std=None,
) -> SplitDataset:
    """Load every split list present under ``root`` in list order."""
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"dataset root {root} does not exist")
    loaded: dict[str, list[Sample]] = {}
    for split in splits:
        listing = root / f"{split}.txt"
        if not listing.exists():
            continue
        samples = []
        for stem in _read_split_file(listing):
            image_path = root / "images" / f"{stem}.ppm"
            label_path = root / "labels" / f"{stem}.pgm"
            if not image_path.exists():
                raise DataError(f"split {split}: image for stem {stem!r} missing ({image_path})")
            if not label_path.exists():
                raise DataError(f"split {split}: labels for stem {stem!r} missing ({label_path})")
            image = normalize(read_image(image_path), mean, std)
            labels = read_labels(label_path, num_classes, ignore_index)
            if labels.shape != image.shape[1:]:
                raise DataError(f"stem {stem!r}: image {image.shape[1:]} and labels {labels.shape} differ in size")
            samples.append(Sample(stem, image, labels.labels))
        loaded[split] = samples
    if not loaded or not any(loaded.values()):
        warnings.warn(f"no samples found under {root}", RuntimeWarning, stacklevel=2)
    for split, samples in loaded.items():
        log.info("split %s: %d samples", split, len(samples))
    return SplitDataset(root, loaded)


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    size: tuple[int, int] = (64, 64)
    num_classes: int = 3
    density: float = 3.0
    noise: float = 0.05

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError("synthetic num_classes must be >= 1")
        if min(self.size) < 1 or self.density < 0 or self.noise < 0:
            raise ConfigError(f"invalid synthetic spec {self}")


# base colours for classes 1.. ; background is drawn from a muted range per image
SHAPE_COLORS = [(0.85, 0.2, 0.2), (0.2, 0.8, 0.25), (0.2, 0.3, 0.9), (0.9, 0.85, 0.2), (0.8, 0.3, 0.85)]


def shape_mask(shape: tuple, h: int, w: int) -> np.ndarray:
    kind = shape[0]
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == "rect":
        _, _, top, left, bottom, right = shape
        return (yy >= top) & (yy < bottom) & (xx >= left) & (xx < right)
    _, _, cy, cx, r = shape
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def synth_dataset(spec: SyntheticSpec, n: int) -> list[Sample]:
    """``n`` images of coloured rectangles and disks on a muted background.

    Class 0 is background; class ``c >= 1`` uses rectangles for odd ``c`` and
    disks for even ``c``.  The number of shapes per image is Poisson with
    mean ``density``; later shapes paint over earlier ones.  Each sample's
    ``shapes`` lists ``(kind, class, geometry...)`` in paint order.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.size
    out = []
    for i in range(n):
        labels = np.zeros((h, w), dtype=np.int64)
        bg = rng.uniform(0.3, 0.5) + rng.uniform(-0.05, 0.05, size=3)
        image = np.broadcast_to(bg.reshape(3, 1, 1), (3, h, w)).copy()
        shapes = []
        count = rng.poisson(spec.density) if spec.density > 0 and spec.num_classes > 1 else 0
        for _ in range(count):
            cls = int(rng.integers(1, spec.num_classes))
            if cls % 2 == 1:
                sh = int(rng.integers(max(h // 8, 1), max(h // 2, 2)))
                sw = int(rng.integers(max(w // 8, 1), max(w // 2, 2)))
                top = int(rng.integers(0, h - sh + 1))
                left = int(rng.integers(0, w - sw + 1))
                shape = ("rect", cls, top, left, top + sh, left + sw)
            else:
                r = int(rng.integers(max(min(h, w) // 10, 1), max(min(h, w) // 4, 2)))
                shape = ("disk", cls, int(rng.integers(0, h)), int(rng.integers(0, w)), r)
            mask = shape_mask(shape, h, w)
            color = np.asarray(SHAPE_COLORS[(cls - 1) % len(SHAPE_COLORS)]) + rng.uniform(-0.05, 0.05, size=3)
            image[:, mask] = color[:, None]
            labels[mask] = cls
            shapes.append(shape)
        if spec.noise > 0:
            image = image + rng.normal(0.0, spec.noise, size=image.shape)
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
        out.append(Sample(f"synth_{spec.seed}_{i:05d}", image, labels, shapes))
    return out


def write_dataset_dir(root: str | Path, splits: dict[str, list[Sample]]) -> None:
    """Write samples in the on-disk layout :func:`load_camvid_dir` reads."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for split, samples in splits.items():
        for s in samples:
            write_image(s.image, root / "images" / f"{s.stem}.ppm")
            write_labels(s.labels, root / "labels" / f"{s.stem}.pgm")
        (root / f"{split}.txt").write_text("".join(f"{s.stem}\n" for s in samples))
