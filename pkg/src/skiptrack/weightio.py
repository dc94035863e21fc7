"""Binary container for named float32 tensors.

Layout (all integers little-endian)::

    b"LGTW"                 magic, 4 bytes
    u32 version             currently 1
    u32 entry_count
    entry_count times:
        u16 name_len
        name_len bytes      UTF-8 name, unique within the file
        u8 rank             1..4
        rank x u32          dims, each >= 1
        prod(dims) x f32    row-major payload

The file ends exactly after the last payload. The same container holds
selector training sets as entries ``z/<i>`` and ``y/<i>``.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, DuplicateNameError, TrailingBytesError, TruncatedFileError,
                     UnsupportedVersionError, WeightFileError)

MAGIC = b"LGTW"
VERSION = 1
MAX_RANK = 4


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if not 1 <= arr.ndim <= MAX_RANK:
            raise ValueError(f"{name}: rank {arr.ndim} is outside 1..{MAX_RANK}")
        if arr.size == 0:
            raise ValueError(f"{name}: empty tensors cannot be stored")
        data = np.ascontiguousarray(arr, dtype="<f4")
        if not np.all(np.isfinite(data)):
            raise ValueError(f"{name}: non-finite values cannot be stored")
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise ValueError(f"name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


def save_weights(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    # dict keys are unique by construction; encode before touching the file
    # so a rejected tensor never leaves a partial file behind
    blob = encode(tensors)
    Path(path).write_bytes(blob)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"file ends inside {what} at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> dict[str, np.ndarray]:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError("not a weight file (bad magic)")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = r.unpack("<H", f"entry {i} name length")
        try:
            name = r.take(name_len, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFileError(f"entry {i} name is not valid UTF-8") from exc
        if name in out:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        (rank,) = r.unpack("<B", f"{name} rank")
        if not 1 <= rank <= MAX_RANK:
            raise WeightFileError(f"{name}: invalid rank {rank}")
        dims = r.unpack(f"<{rank}I", f"{name} dims")
        if min(dims) < 1:
            raise WeightFileError(f"{name}: zero-length dimension in {dims}")
        n = math.prod(dims)
        payload = r.take(4 * n, f"{name} payload")
        out[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(buf):
        raise TrailingBytesError(f"{len(buf) - r.pos} unexpected bytes after the last entry")
    return out


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def save_dataset(path: str | Path, samples: list[tuple[np.ndarray, np.ndarray]]) -> None:
    tensors = {}
    for i, (z, y) in enumerate(samples):
        tensors[f"z/{i}"] = np.asarray(z, dtype=np.float32)
        tensors[f"y/{i}"] = np.asarray(getattr(y, "y", y), dtype=np.float32)
    save_weights(path, tensors)


def load_dataset(path: str | Path) -> list[tuple[np.ndarray, np.ndarray]]:
    tensors = load_weights(path)
    n = sum(1 for k in tensors if k.startswith("z/"))
    try:
        return [(tensors[f"z/{i}"], tensors[f"y/{i}"]) for i in range(n)]
    except KeyError as exc:
        raise WeightFileError(f"dataset entry {exc.args[0]} is missing") from exc
