"""Versioned binary checkpoints: embedded config text plus named f32 tensors.

Layout, all little-endian: magic "RFN1", u16 version, u32 config byte length,
UTF-8 config text, u32 tensor count, then per tensor a u16 name length,
UTF-8 name, u8 rank, one u32 per dimension, and the f32 values row-major.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import FormatError

MAGIC = b"RFN1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config_text: str
    tensors: dict[str, np.ndarray]  # saved in insertion order

    def __eq__(self, other):
        return (self.config_text == other.config_text
                and list(self.tensors) == list(other.tensors)
                and all(a.tobytes() == other.tensors[k].tobytes()
                        and a.shape == other.tensors[k].shape
                        for k, a in self.tensors.items()))


def save_checkpoint(ck: Checkpoint, path):
    config_bytes = ck.config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<I", len(ck.tensors)))
        for name, arr in ck.tensors.items():
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError(f"bad magic: expected {MAGIC!r}, got {blob[:4]!r}")
    if len(blob) < 10:
        raise FormatError("truncated header")
    version, config_len = struct.unpack("<HI", blob[4:10])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    offset = 10
    try:
        config_text = blob[offset:offset + config_len].decode("utf-8")
        if len(blob) < offset + config_len + 4:
            raise FormatError("truncated config section")
        offset += config_len
        (count,) = struct.unpack("<I", blob[offset:offset + 4])
        offset += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", blob[offset:offset + 2])
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack("<B", blob[offset:offset + 1])
            offset += 1
            dims = struct.unpack(f"<{rank}I", blob[offset:offset + 4 * rank])
            offset += 4 * rank
            size = int(np.prod(dims)) if dims else 1
            if offset + 4 * size > len(blob):
                raise FormatError(f"truncated values for tensor {name!r}")
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
            tensors[name] = arr.reshape(dims).copy()
            offset += 4 * size
        if offset != len(blob):
            raise FormatError(f"{len(blob) - offset} trailing bytes after last tensor")
        return Checkpoint(config_text=config_text, tensors=tensors)
    except struct.error as e:
        raise FormatError(f"truncated checkpoint: {e}") from None


def checkpoint_io(ck: Checkpoint | None, path, direction: str):
    if direction == "save":
        save_checkpoint(ck, path)
        return None
    if direction == "load":
        return load_checkpoint(path)
    raise ValueError(f"direction must be 'save' or 'load', got {direction!r}")
