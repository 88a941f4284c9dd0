"""Binary checkpoint container for named float32 tensors.

Layout (all integers little-endian):

    magic "THMB" | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 rank | u32 dims... | f32 data...

Roundtrips are bit-exact: data bytes are written verbatim from the float32
arrays and read back with the same layout.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor

MAGIC = b"THMB"


def save_tensors(path, tensors: Mapping[str, Tensor | np.ndarray]) -> None:
    """Write named tensors in the mapping's iteration order."""
    blobs = [MAGIC, struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.data if isinstance(t, Tensor) else t, dtype="<f4")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"tensor rank {arr.ndim} exceeds container limit")
        blobs.append(struct.pack("<H", len(nb)))
        blobs.append(nb)
        blobs.append(struct.pack("<B", arr.ndim))
        blobs.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blobs.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(blobs))


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read a container back into an ordered name → float32 array mapping."""
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    def need(pos: int, n: int) -> int:
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint {path} at byte {pos}")
        return pos + n

    pos = need(0, 4)
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}: expected {MAGIC!r}, got {buf[:4]!r}")
    end = need(pos, 4)
    (count,) = struct.unpack("<I", buf[pos:end])
    pos = end

    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        end = need(pos, 2)
        (name_len,) = struct.unpack("<H", buf[pos:end])
        pos = need(end, name_len)
        name = buf[end:pos].decode("utf-8")
        end = need(pos, 1)
        rank = buf[pos]
        pos = need(end, 4 * rank)
        shape = struct.unpack(f"<{rank}I", buf[end:pos])
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        end = need(pos, 4 * n)
        arr = np.frombuffer(buf[pos:end], dtype="<f4").astype(np.float32).reshape(shape)
        pos = end
        if name in out:
            raise CheckpointError(f"duplicate tensor name {name!r} in {path}")
        out[name] = arr
    if pos != len(buf):
        raise CheckpointError(f"trailing bytes after tensor {count} at byte {pos} in {path}")
    return out


def save_sidecar(path, values: Mapping[str, str]) -> None:
    """Human-readable key=value companion file."""
    lines = [f"{k}={v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_sidecar(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise CheckpointError(f"cannot read sidecar {path}: {e}") from e
    out: dict[str, str] = {}
    for i, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CheckpointError(f"sidecar {path} line {i}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out
