"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"LETN"  u32 version  u32 tensor_count
    repeat tensor_count times:
        u16 name_len  name (utf-8)  u8 rank  u32 dims[rank]  f32 payload[prod(dims)]
    u32 crc32

The CRC covers every byte between the 12-byte header and the CRC itself.
The first tensor, ``__config__``, holds the model configuration as UTF-8
JSON with one byte per f32 element, so a checkpoint can rebuild its model.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError, CheckpointMismatch
from .model import LETNet, ModelConfig

MAGIC = b"LETN"
VERSION = 1
CONFIG_TENSOR = "__config__"
_HEADER = struct.Struct("<4sII")


def _encode_tensor(name: str, array: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    arr = np.ascontiguousarray(array, dtype="<f4")
    parts = [struct.pack("<H", len(encoded)), encoded, struct.pack("<B", arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(arr.tobytes())
    return b"".join(parts)


def encode(tensors: dict[str, np.ndarray], config: dict | None = None) -> bytes:
    items = list(tensors.items())
    if config is not None:
        blob = np.frombuffer(json.dumps(config, sort_keys=True).encode("utf-8"), dtype=np.uint8)
        items.insert(0, (CONFIG_TENSOR, blob.astype(np.float32)))
    body = b"".join(_encode_tensor(name, arr) for name, arr in items)
    return _HEADER.pack(MAGIC, VERSION, len(items)) + body + struct.pack("<I", zlib.crc32(body))


def decode(raw: bytes, source: str = "<bytes>") -> tuple[dict[str, np.ndarray], dict | None]:
    """Parse checkpoint bytes into an ordered tensor table and the config echo."""
    if len(raw) < _HEADER.size + 4:
        raise CheckpointError(f"{source}: truncated file ({len(raw)} bytes, header needs {_HEADER.size + 4})")
    magic, version, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported version {version}, expected {VERSION}")
    end = len(raw) - 4
    pos = _HEADER.size

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > end:
            raise CheckpointError(f"{source}: truncated while reading {what} at byte {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    tensors: dict[str, np.ndarray] = {}
    for index in range(count):
        (length,) = struct.unpack("<H", take(2, f"name length of tensor {index}"))
        try:
            name = take(length, f"name of tensor {index}").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{source}: tensor {index} name is not UTF-8 (ends at byte {pos})") from None
        (rank,) = struct.unpack("<B", take(1, f"rank of {name!r}"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name!r}"))
        size = int(np.prod(dims, dtype=np.int64))
        payload = take(4 * size, f"payload of {name!r}")
        if name in tensors:
            raise CheckpointError(f"{source}: duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if pos != end:
        raise CheckpointError(f"{source}: {end - pos} unexpected bytes after the last tensor at byte {pos}")
    (stored,) = struct.unpack_from("<I", raw, end)
    actual = zlib.crc32(raw[_HEADER.size:end])
    if stored != actual:
        raise CheckpointError(f"{source}: CRC mismatch (stored {stored:08x}, computed {actual:08x})")

    config = None
    if CONFIG_TENSOR in tensors:
        blob = tensors.pop(CONFIG_TENSOR).astype(np.uint8).tobytes()
        try:
            config = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{source}: unreadable config echo: {exc}") from None
    return tensors, config


def config_from_dict(d: dict) -> ModelConfig:
    known = set(ModelConfig.__dataclass_fields__)
    return ModelConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known})


def save_checkpoint(model: LETNet, path: str | Path) -> None:
    Path(path).write_bytes(encode(model.state_dict(), asdict(model.cfg)))


def load_into(model: LETNet, tensors: dict[str, np.ndarray]) -> LETNet:
    """Copy ``tensors`` into ``model``, naming the first tensor that does not fit."""
    own = model.state_dict()
    for name, value in tensors.items():
        if name not in own:
            raise CheckpointMismatch(f"checkpoint tensor {name!r} is absent from the target model")
        if own[name].shape != value.shape:
            raise CheckpointMismatch(f"tensor {name!r}: checkpoint shape {value.shape} != model shape {own[name].shape}")
    for name in own:
        if name not in tensors:
            raise CheckpointMismatch(f"model tensor {name!r} is absent from the checkpoint")
    model.load_state_dict(tensors)
    return model


def load_checkpoint(path: str | Path, cfg: ModelConfig | None = None) -> LETNet:
    """Rebuild a model from a checkpoint.

    Without ``cfg`` the embedded configuration is used; with ``cfg`` the
    weights are loaded into a model of that configuration.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    tensors, echo = decode(raw, str(path))
    if cfg is None:
        if echo is None:
            raise CheckpointError(f"{path}: no config echo; pass the model configuration explicitly")
        cfg = config_from_dict(echo)
    model = LETNet(cfg)
    load_into(model, tensors)
    model.eval()
    return model
