"""Little-endian binary container shared by every snapshot format.

Layout convention: 4 magic bytes, u32 version, then format-specific
fields. Scalars are u32, floats are stored as float32 regardless of the
in-memory dtype (round-trips are bitwise lossless at that stored
precision), strings are u32 byte length + UTF-8 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, IoError, TruncatedError, UnsupportedVersionError


class Writer:
    def __init__(self, magic: str, version: int):
        assert len(magic) == 4
        self._parts: list[bytes] = [magic.encode("ascii")]
        self.u32(version)

    def u32(self, value: int) -> "Writer":
        if value < 0 or value > 0xFFFFFFFF:
            raise ValueError(f"u32 out of range: {value}")
        self._parts.append(struct.pack("<I", value))
        return self

    def f32s(self, arr: np.ndarray) -> "Writer":
        self._parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return self

    def string(self, s: str) -> "Writer":
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self._parts.append(raw)
        return self

    def to_bytes(self) -> bytes:
        return b"".join(self._parts)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())


class Reader:
    def __init__(self, data: bytes, magic: str, version: int):
        self._data = data
        self._pos = 0
        if len(data) < 4:
            raise TruncatedError(f"truncated container: {len(data)} bytes, no room for magic")
        got = data[:4]
        if got != magic.encode("ascii"):
            raise BadMagicError(f"bad magic: expected {magic!r}, found {got!r}")
        self._pos = 4
        file_version = self.u32()
        if file_version != version:
            raise UnsupportedVersionError(f"unsupported version {file_version}, this build reads {version}")

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise TruncatedError(
                f"truncated container: wanted {n} bytes at offset {self._pos}, file has {len(self._data)}"
            )
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def f32s(self, count: int, dtype=np.float64) -> np.ndarray:
        raw = self._take(4 * count)
        return np.frombuffer(raw, dtype="<f4").astype(dtype)

    def string(self) -> str:
        n = self.u32()
        return self._take(n).decode("utf-8")

    def expect_eof(self) -> None:
        if self._pos != len(self._data):
            raise TruncatedError(f"container has {len(self._data) - self._pos} trailing bytes")

    @classmethod
    def from_file(cls, path: str | Path, magic: str, version: int) -> "Reader":
        p = Path(path)
        if not p.is_file():
            raise IoError(f"file not found: {p}")
        return cls(p.read_bytes(), magic, version)
