"""Binary parameter container: little-endian, bit-exact round trips.

Layout: magic "VNSCPARM", format version u32, entry count u32, then per
entry a u16 name length + UTF-8 name, rank u8, one u32 extent per axis, and
the raw float32 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"VNSCPARM"
VERSION = 1


def save_parameters(path, state: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, arr in state.items():
        # explicit little-endian dtype; asarray keeps 0-d scalars rank 0
        arr = np.asarray(arr, dtype="<f4")
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise FormatError(f"parameter name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise FormatError(f"parameter rank {arr.ndim} exceeds format limit")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_parameters(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a parameter file (bad magic)")
    version, count = struct.unpack_from("<II", blob, len(MAGIC))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    offset = len(MAGIC) + 8
    state: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise FormatError(f"{path}: truncated after {offset} bytes")
        piece = blob[offset : offset + n]
        offset += n
        return piece

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        if name in state:
            raise FormatError(f"{path}: duplicate parameter {name!r}")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n_values = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * n_values), dtype="<f4").reshape(shape)
        state[name] = data.astype(np.float32, copy=True)
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes after last parameter")
    return state
