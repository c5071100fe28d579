"""Little-endian binary readers/writers shared by the artifact file formats."""

from __future__ import annotations

import struct

from .errors import FormatError


def pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError("string too long for u16 length prefix")
    return struct.pack("<H", len(raw)) + raw


class Reader:
    """Cursor over a byte blob; running past the end is a format error."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise FormatError("truncated file")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def read_str(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def expect_eof(self, what: str) -> None:
        if self.off != len(self.blob):
            raise FormatError(f"trailing bytes after {what} payload")
