"""
Checkpoints - Versioned, self-describing binary snapshots of a run.

FILE LAYOUT (little-endian):
    b"VXFU"                      magic
    u32                          format version
    repeated section:
        u16 name length, name (utf-8)
        u64 payload length, payload
    8 bytes                      BLAKE2b-64 digest of everything above

SECTIONS:
    params   tensor table    all network parameters
    adam     tensor table    optimizer moments ('<name>/exp_avg', ...)
    grid     tensor table    coords, features, origin, voxel_size (optional)
    config   JSON            train config, architecture, stage, iteration
    rng      JSON            numpy bit-generator state

TENSOR TABLE:
    u32 count, then per tensor:
        u16 name length, name, u8 dtype code, u8 ndim, ndim x u64 dims,
        u64 byte count, raw little-endian data
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from config import ArchitectureConfig, TrainConfig
from grid.sparse_grid import SparseVoxelGrid

logger = logging.getLogger(__name__)

MAGIC = b"VXFU"
VERSION = 1
DIGEST_SIZE = 8

DTYPE_CODES = {torch.float64: 1, torch.float32: 2, torch.int64: 3, torch.int32: 4, torch.bool: 5}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}
NUMPY_DTYPES = {1: "<f8", 2: "<f4", 3: "<i8", 4: "<i4", 5: "|b1"}


class CheckpointError(ValueError):
    """A checkpoint file cannot be used."""


class CheckpointVersionError(CheckpointError):
    """The file was written by an incompatible format version."""


class CheckpointCorruptError(CheckpointError):
    """Bad magic, truncated payload or checksum mismatch."""


@dataclass
class Checkpoint:
    params: OrderedDict[str, torch.Tensor]
    train_config: TrainConfig
    arch: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    adam: dict[str, torch.Tensor] = field(default_factory=dict)
    grid: SparseVoxelGrid | None = None
    stage: str = "local"
    iteration: int = 0
    rng_state: dict[str, Any] = field(default_factory=dict)
    version: int = VERSION


# =============================================================================
# TENSOR TABLES
# =============================================================================


def _pack_name(name: str) -> bytes:
    encoded = name.encode("utf-8")
    return struct.pack("<H", len(encoded)) + encoded


def encode_tensor_table(tensors: dict[str, torch.Tensor]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, tensor in tensors.items():
        tensor = tensor.detach().contiguous()
        if tensor.dtype not in DTYPE_CODES:
            raise CheckpointError(f"cannot store {name!r} with dtype {tensor.dtype}")
        code = DTYPE_CODES[tensor.dtype]
        data = tensor.numpy().astype(NUMPY_DTYPES[code], copy=False).tobytes()
        parts += [
            _pack_name(name),
            struct.pack("<BB", code, tensor.dim()),
            struct.pack(f"<{tensor.dim()}Q", *tensor.shape),
            struct.pack("<Q", len(data)),
            data,
        ]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointCorruptError("checkpoint is truncated")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (length,) = self.unpack("<H")
        return self.take(length).decode("utf-8")

    @property
    def done(self) -> bool:
        return self.offset == len(self.data)


def decode_tensor_table(payload: bytes) -> OrderedDict[str, torch.Tensor]:
    reader = _Reader(payload)
    (count,) = reader.unpack("<I")
    tensors: OrderedDict[str, torch.Tensor] = OrderedDict()
    for _ in range(count):
        name = reader.name()
        code, ndim = reader.unpack("<BB")
        if code not in CODE_DTYPES:
            raise CheckpointCorruptError(f"unknown dtype code {code} for {name!r}")
        shape = reader.unpack(f"<{ndim}Q")
        (size,) = reader.unpack("<Q")
        array = np.frombuffer(reader.take(size), dtype=NUMPY_DTYPES[code]).reshape(shape)
        tensors[name] = torch.from_numpy(array.astype(array.dtype.newbyteorder("="), copy=True))
    if not reader.done:
        raise CheckpointCorruptError("trailing bytes in tensor table")
    return tensors


def _json_bytes(value: Any) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(",", ":")).encode("utf-8")


# =============================================================================
# SAVE / LOAD
# =============================================================================


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    sections: list[tuple[str, bytes]] = [
        ("params", encode_tensor_table(checkpoint.params)),
        ("adam", encode_tensor_table(checkpoint.adam)),
    ]
    if checkpoint.grid is not None:
        sections.append(("grid", encode_tensor_table(checkpoint.grid.state_dict())))
    sections += [
        (
            "config",
            _json_bytes(
                {
                    "train": checkpoint.train_config.to_dict(),
                    "architecture": checkpoint.arch.to_dict(),
                    "stage": checkpoint.stage,
                    "iteration": checkpoint.iteration,
                }
            ),
        ),
        ("rng", _json_bytes(checkpoint.rng_state)),
    ]
    body = [MAGIC, struct.pack("<I", checkpoint.version)]
    for name, payload in sections:
        body += [_pack_name(name), struct.pack("<Q", len(payload)), payload]
    data = b"".join(body)
    return data + hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest()


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 4 + DIGEST_SIZE or data[: len(MAGIC)] != MAGIC:
        raise CheckpointCorruptError("not a voxfuse checkpoint (bad magic or too short)")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.blake2b(body, digest_size=DIGEST_SIZE).digest() != digest:
        raise CheckpointCorruptError("checksum mismatch (file truncated or modified)")

    reader = _Reader(body)
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version} is not supported (expected {VERSION})")

    sections: dict[str, bytes] = {}
    while not reader.done:
        name = reader.name()
        (size,) = reader.unpack("<Q")
        sections[name] = reader.take(size)
    for required in ("params", "adam", "config", "rng"):
        if required not in sections:
            raise CheckpointCorruptError(f"missing section {required!r}")

    config = json.loads(sections["config"])
    return Checkpoint(
        params=decode_tensor_table(sections["params"]),
        train_config=TrainConfig.from_dict(config["train"]),
        arch=ArchitectureConfig.from_dict(config["architecture"]),
        adam=dict(decode_tensor_table(sections["adam"])),
        grid=SparseVoxelGrid.from_state(decode_tensor_table(sections["grid"])) if "grid" in sections else None,
        stage=config["stage"],
        iteration=int(config["iteration"]),
        rng_state=json.loads(sections["rng"]),
        version=version,
    )


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_checkpoint(checkpoint)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    logger.info("saved checkpoint %s (%d bytes, stage=%s, iteration=%d)", path, len(data), checkpoint.stage, checkpoint.iteration)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    """
    Raises:
        FileNotFoundError: path does not exist
        CheckpointCorruptError: bad magic, truncation or checksum mismatch
        CheckpointVersionError: unsupported format version
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
