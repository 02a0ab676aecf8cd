"""Little-endian binary reading with offset-carrying error messages."""

from __future__ import annotations

import struct

from .errors import FormatError


class Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise FormatError(
                f"{self.path}: truncated reading {what} at offset {self.off} "
                f"(need {n} bytes, have {len(self.blob) - self.off})")
        chunk = self.blob[self.off:self.off + n]
        self.off += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def expect_end(self):
        if self.off != len(self.blob):
            raise FormatError(f"{self.path}: {len(self.blob) - self.off} "
                              f"trailing bytes at offset {self.off}")
