"""Little-endian binary IO helpers shared by the on-disk formats.

All container formats in this package (MSEQ, AFSQ, CKPC, JVMD) are
magic-prefixed, little-endian, with f32 payloads. These helpers keep the
parsing uniform and make truncation / bad-magic errors carry the byte
offset where decoding failed.
"""

from __future__ import annotations

import struct

import numpy as np


class FormatError(ValueError):
    """Raised when a binary file violates its declared format."""


class Reader:
    def __init__(self, data: bytes, path: str = "<bytes>"):
        self.data = data
        self.path = path
        self.pos = 0

    def _take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated while reading {what} at byte offset "
                f"{self.pos} (need {n} bytes, have {len(self.data) - self.pos})"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def expect_magic(self, magic: bytes) -> None:
        got = self._take(len(magic), f"magic {magic!r}")
        if got != magic:
            raise FormatError(
                f"{self.path}: bad magic at byte offset 0: expected {magic!r}, got {got!r}"
            )

    def u32(self, what: str = "u32") -> int:
        return struct.unpack("<I", self._take(4, what))[0]

    def f32(self, what: str = "f32") -> float:
        return struct.unpack("<f", self._take(4, what))[0]

    def f32_array(self, count: int, what: str = "f32 array") -> np.ndarray:
        raw = self._take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").copy()

    def f64_array(self, count: int, what: str = "f64 array") -> np.ndarray:
        raw = self._take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").copy()

    def bytes_(self, n: int, what: str = "bytes") -> bytes:
        return self._take(n, what)

    def expect_eof(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.path}: {len(self.data) - self.pos} trailing bytes at offset {self.pos}"
            )


class Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def magic(self, magic: bytes) -> None:
        self.parts.append(magic)

    def u32(self, value: int) -> None:
        self.parts.append(struct.pack("<I", value))

    def f32(self, value: float) -> None:
        self.parts.append(struct.pack("<f", value))

    def f32_array(self, arr: np.ndarray) -> None:
        self.parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    def f64_array(self, arr: np.ndarray) -> None:
        self.parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def bytes_(self, raw: bytes) -> None:
        self.parts.append(raw)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


def read_file(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def write_file(path, payload: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(payload)
