"""Framed binary files: magic, version byte, length, payload, CRC32.

Layout: ``magic(5) | version(1) | payload_len(u64 BE) | payload | crc32(u32 BE)``
where the checksum covers the payload bytes only.
"""

from __future__ import annotations

import struct
import zlib

from .errors import ChecksumError, LoadError, VersionError


def write_framed(path, magic: bytes, version: int, payload: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(bytes([version]))
        fh.write(struct.pack(">Q", len(payload)))
        fh.write(payload)
        fh.write(struct.pack(">I", zlib.crc32(payload) & 0xFFFFFFFF))


def read_framed(path, magic: bytes, supported_versions) -> tuple:
    with open(path, "rb") as fh:
        data = fh.read()
    hdr = len(magic) + 1 + 8
    if len(data) < hdr:
        raise LoadError("%s: file too short for header" % path)
    if data[:len(magic)] != magic:
        raise LoadError("%s: bad magic %r (expected %r)"
                        % (path, data[:len(magic)], magic))
    version = data[len(magic)]
    if version not in supported_versions:
        raise VersionError("%s: unsupported format version %d" % (path, version))
    (payload_len,) = struct.unpack(">Q", data[len(magic) + 1:hdr])
    if len(data) < hdr + payload_len + 4:
        raise ChecksumError("%s: truncated (declared %d payload bytes)"
                            % (path, payload_len))
    payload = data[hdr:hdr + payload_len]
    (crc,) = struct.unpack(">I", data[hdr + payload_len:hdr + payload_len + 4])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError("%s: checksum mismatch" % path)
    return version, payload
