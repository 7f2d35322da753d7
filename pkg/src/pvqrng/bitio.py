"""On-disk formats for record streams and bit strings. All integers are little-endian.

Record file::

    magic    4 bytes  b"PVQ4"
    version  1 byte   1
    count    8 bytes  uint64 number of records
    records  ceil(count/2) bytes, two records per byte, the first in the high
             nibble; within a nibble A is the most significant bit, then B, C, D
    flag     1 byte   1 if a timestamp block follows, else 0
    times    count x float64 seconds (only if flag is 1)

Bit-string file::

    magic    4 bytes  b"PVQ1"
    length   8 bytes  uint64 number of bits
    bits     ceil(length/8) bytes, most significant bit first, zero padded
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .photonics import BitRecordStream

RECORD_MAGIC = b"PVQ4"
RECORD_VERSION = 1
BITS_MAGIC = b"PVQ1"
_REC_HEADER = struct.Struct("<4sBQ")
_BITS_HEADER = struct.Struct("<4sQ")


class FormatError(ValueError):
    pass


def encode_records(stream: BitRecordStream) -> bytes:
    r = stream.records
    nib = (r[:, 0] << 3) | (r[:, 1] << 2) | (r[:, 2] << 1) | r[:, 3]
    if nib.size % 2:
        nib = np.append(nib, 0)
    packed = ((nib[0::2] << 4) | nib[1::2]).astype(np.uint8)
    out = [_REC_HEADER.pack(RECORD_MAGIC, RECORD_VERSION, len(r)), packed.tobytes()]
    if stream.timestamps is None:
        out.append(b"\x00")
    else:
        out.append(b"\x01")
        out.append(np.ascontiguousarray(stream.timestamps, dtype="<f8").tobytes())
    return b"".join(out)


def decode_records(blob: bytes) -> BitRecordStream:
    if len(blob) < _REC_HEADER.size:
        raise FormatError("record file too short")
    magic, version, count = _REC_HEADER.unpack_from(blob)
    if magic != RECORD_MAGIC:
        raise FormatError("not a record file")
    if version != RECORD_VERSION:
        raise FormatError(f"unsupported record file version {version}")
    nbytes = (count + 1) // 2
    pos = _REC_HEADER.size
    if len(blob) < pos + nbytes + 1:
        raise FormatError("record file truncated")
    packed = np.frombuffer(blob, dtype=np.uint8, count=nbytes, offset=pos)
    nib = np.empty(2 * nbytes, dtype=np.uint8)
    nib[0::2] = packed >> 4
    nib[1::2] = packed & 0xF
    nib = nib[:count]
    records = np.stack([(nib >> 3) & 1, (nib >> 2) & 1, (nib >> 1) & 1, nib & 1], axis=1)
    pos += nbytes
    flag = blob[pos]
    pos += 1
    if flag == 0:
        ts = None
        expected = pos
    elif flag == 1:
        expected = pos + 8 * count
        if len(blob) < expected:
            raise FormatError("timestamp block truncated")
        ts = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64)
    else:
        raise FormatError(f"bad timestamp flag {flag}")
    if len(blob) != expected:
        raise FormatError("trailing bytes after record file")
    try:
        return BitRecordStream(records, ts)
    except ValueError as e:
        raise FormatError(str(e)) from e


def encode_bits(bits) -> bytes:
    b = np.asarray(bits, dtype=np.uint8).ravel()
    if b.size and b.max() > 1:
        raise ValueError("bits must be 0 or 1")
    return _BITS_HEADER.pack(BITS_MAGIC, b.size) + np.packbits(b).tobytes()


def decode_bits(blob: bytes) -> np.ndarray:
    if len(blob) < _BITS_HEADER.size:
        raise FormatError("bit file too short")
    magic, n = _BITS_HEADER.unpack_from(blob)
    if magic != BITS_MAGIC:
        raise FormatError("not a bit-string file")
    body = blob[_BITS_HEADER.size :]
    if len(body) != (n + 7) // 8:
        raise FormatError("bit-string body length does not match header")
    return np.unpackbits(np.frombuffer(body, dtype=np.uint8))[:n]


def write_records(path: str | Path, stream: BitRecordStream) -> None:
    Path(path).write_bytes(encode_records(stream))


def read_records(path: str | Path) -> BitRecordStream:
    return decode_records(Path(path).read_bytes())


def write_bits(path: str | Path, bits) -> None:
    Path(path).write_bytes(encode_bits(bits))


def read_bits(path: str | Path) -> np.ndarray:
    return decode_bits(Path(path).read_bytes())
