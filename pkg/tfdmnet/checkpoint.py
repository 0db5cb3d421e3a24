"""
Checkpoint files

Layout (all integers little-endian):

    magic       4 bytes   b"TFDM"
    version     u16
    digest      32 bytes  sha256 of the config YAML
    config      u32 length + UTF-8 YAML
    meta        u32 length + UTF-8 JSON (seed, precision, epoch, optimizer settings)
    tensors     u32 count, then per tensor:
                  u16 name length + UTF-8 name
                  u8 dtype code, u8 ndim, u32 per dim
                  raw little-endian data
    checksum    u32 crc32 of every preceding byte

Tensor names carry a group prefix: "param/", "buffer/" or "opt/".
"""

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from tfdmnet.config import NetworkConfig, config_digest, dump_config, parse_config
from tfdmnet.errors import (
    CheckpointChecksumError,
    CheckpointConfigMismatch,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    ShapeError,
)
from tfdmnet.models import Network, build_network
from tfdmnet.training import OptimizerState

__all__ = ["MAGIC", "FORMAT_VERSION", "Checkpoint", "save_checkpoint", "load_checkpoint"]

MAGIC = b"TFDM"
FORMAT_VERSION = 1

DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i8"): 3,
}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    network: Network
    optimizer: Optional[OptimizerState]
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def config(self) -> NetworkConfig:
        return self.network.cfg


def _pack_tensor(name: str, value: np.ndarray) -> bytes:
    array = np.asarray(value)
    dtype = array.dtype.newbyteorder("<")
    if dtype not in DTYPE_CODES:
        raise ValueError(f"{name}: cannot store dtype {array.dtype}")
    encoded = name.encode("utf-8")
    header = struct.pack("<H", len(encoded)) + encoded
    header += struct.pack("<BB", DTYPE_CODES[dtype], array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=dtype).tobytes()


def _length_prefixed(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def save_checkpoint(network: Network, path, optimizer: Optional[OptimizerState] = None,
                    meta: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    info = dict(meta or {})
    info.setdefault("seed", network.seed)
    info["precision"] = str(network.dtype)
    if optimizer is not None:
        info["optimizer"] = {
            "kind": optimizer.kind,
            "learning_rate": optimizer.learning_rate,
            "momentum": optimizer.momentum,
            "decay": optimizer.decay,
            "epsilon": optimizer.epsilon,
            "weight_decay": optimizer.weight_decay,
        }

    tensors = [(f"param/{k}", v) for k, v in network.parameters().items()]
    tensors += [(f"buffer/{k}", v) for k, v in network.buffers().items()]
    if optimizer is not None:
        tensors += [(f"opt/{k}", v) for k, v in sorted(optimizer.slots.items())]

    body = bytearray(MAGIC)
    body += struct.pack("<H", FORMAT_VERSION)
    body += config_digest(network.cfg)
    body += _length_prefixed(dump_config(network.cfg).encode("utf-8"))
    body += _length_prefixed(json.dumps(info, sort_keys=True).encode("utf-8"))
    body += struct.pack("<I", len(tensors))
    for name, value in tensors:
        body += _pack_tensor(name, value)
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(body))
    return path


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if end > len(self.data):
            raise CheckpointTruncatedError(
                f"{self.source}: unexpected end of data at byte {self.offset} (needed {count} more)"
            )
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_tensor(reader: _Reader) -> Tuple[str, np.ndarray]:
    (name_len,) = reader.unpack("<H")
    name = reader.take(name_len).decode("utf-8")
    code, ndim = reader.unpack("<BB")
    if code not in CODE_DTYPES:
        raise CheckpointError(f"{reader.source}: tensor {name} has unknown dtype code {code}")
    dims = reader.unpack(f"<{ndim}I") if ndim else ()
    dtype = CODE_DTYPES[code]
    count = int(np.prod(dims)) if dims else 1
    raw = reader.take(count * dtype.itemsize)
    return name, np.frombuffer(raw, dtype=dtype).reshape(dims).copy()


def load_checkpoint(path, expected_config: Optional[NetworkConfig] = None) -> Checkpoint:
    """
    Read a checkpoint and rebuild its network.

    Raises CheckpointVersionError, CheckpointChecksumError (covers truncation
    past the header), CheckpointTruncatedError or CheckpointConfigMismatch.
    """
    path = Path(path)
    data = path.read_bytes()
    source = path.name
    minimum = len(MAGIC) + 2 + 32 + 4
    if len(data) < minimum:
        raise CheckpointTruncatedError(f"{source}: only {len(data)} bytes, not a checkpoint")
    if data[:4] != MAGIC:
        raise CheckpointError(f"{source}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<H", data[4:6])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{source}: format version {version}, this build reads version {FORMAT_VERSION}"
        )
    (stored_crc,) = struct.unpack("<I", data[-4:])
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointChecksumError(
            f"{source}: checksum mismatch (stored {stored_crc:08x}, computed {actual_crc:08x}); "
            "file is truncated or corrupt"
        )

    reader = _Reader(data[:-4], source)
    reader.take(6)
    digest = reader.take(32)
    (config_len,) = reader.unpack("<I")
    config_text = reader.take(config_len).decode("utf-8")
    (meta_len,) = reader.unpack("<I")
    meta = json.loads(reader.take(meta_len).decode("utf-8"))
    (count,) = reader.unpack("<I")
    tensors = dict(_read_tensor(reader) for _ in range(count))
    if reader.offset != len(reader.data):
        raise CheckpointError(f"{source}: {len(reader.data) - reader.offset} unexpected trailing bytes")

    try:
        cfg = parse_config(config_text)
    except ConfigError as e:
        raise CheckpointError(f"{source}: stored config is unreadable: {e}") from None
    if config_digest(cfg) != digest:
        raise CheckpointChecksumError(f"{source}: config digest does not match the stored config")
    if expected_config is not None and config_digest(expected_config) != digest:
        raise CheckpointConfigMismatch(
            f"{source}: checkpoint holds '{cfg.name}', expected '{expected_config.name}'"
        )

    network = build_network(cfg, seed=int(meta.get("seed", 0)), precision=meta.get("precision", "float32"))
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    buffers = {k[len("buffer/"):]: v for k, v in tensors.items() if k.startswith("buffer/")}
    try:
        network.load_state(params, buffers)
    except ShapeError as e:
        raise CheckpointError(f"{source}: {e}") from None

    optimizer = None
    if "optimizer" in meta:
        settings = meta["optimizer"]
        optimizer = OptimizerState(
            kind=settings["kind"],
            learning_rate=settings["learning_rate"],
            momentum=settings["momentum"],
            decay=settings["decay"],
            epsilon=settings["epsilon"],
            weight_decay=settings["weight_decay"],
            slots={k[len("opt/"):]: v for k, v in tensors.items() if k.startswith("opt/")},
        )
    return Checkpoint(network=network, optimizer=optimizer, meta=meta)
