"""Binary time-tag file format (.ptag) reader and writer.

Layout, all little-endian:

====== ====== =====================================
offset size   field
====== ====== =====================================
0      4      magic ``b"PTAG"``
4      2      format version (currently 1)
6      8      time resolution in picoseconds
14     1      channel count
15     5      reserved, zero
20     9*n    records: u8 channel, u64 time
====== ====== =====================================

Records must be sorted by time; equal-time records may appear in any
channel order and are canonicalised to (time, channel) order on read.
Malformed files raise :class:`PtagFormatError` carrying the byte offset
of the offending record or header field.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .montecarlo import TimeTagStream

__all__ = ["PtagFormatError", "read_ptag", "write_ptag", "MAGIC", "VERSION"]

MAGIC = b"PTAG"
VERSION = 1

_HEADER = struct.Struct("<4sHQB5s")
HEADER_SIZE = _HEADER.size  # 20
_RECORD_DTYPE = np.dtype([("ch", "u1"), ("t", "<u8")])
RECORD_SIZE = _RECORD_DTYPE.itemsize  # 9


class PtagFormatError(ValueError):
    """Raised for malformed .ptag content; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def write_ptag(path: str | os.PathLike, stream: TimeTagStream) -> None:
    """Write a stream to ``path``; tags are stored in their sorted order."""
    rec = np.empty(stream.n_tags, dtype=_RECORD_DTYPE)
    rec["ch"] = stream.channels
    rec["t"] = stream.times
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                MAGIC,
                VERSION,
                stream.resolution_ps,
                stream.channel_count,
                b"\x00" * 5,
            )
        )
        fh.write(rec.tobytes())


def read_ptag(path: str | os.PathLike, duration_ps: int | None = None) -> TimeTagStream:
    """Read and validate a .ptag file.

    The format stores no acquisition duration; unless ``duration_ps`` is
    given it is inferred as (last tag time + 1). Validation covers magic,
    version, header sanity, record alignment, channel range and sort
    order, each with the byte offset of the first violation.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise PtagFormatError(f"file too short for header ({len(raw)} bytes)", 0)
    magic, version, resolution, channel_count, _reserved = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise PtagFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise PtagFormatError(f"unsupported format version {version}", 4)
    if resolution < 1:
        raise PtagFormatError("resolution must be >= 1 ps", 6)
    if channel_count < 1:
        raise PtagFormatError("channel count must be >= 1", 14)

    body = len(raw) - HEADER_SIZE
    n, rem = divmod(body, RECORD_SIZE)
    if rem:
        raise PtagFormatError(
            f"truncated record: {rem} trailing bytes", HEADER_SIZE + n * RECORD_SIZE
        )
    rec = np.frombuffer(raw, dtype=_RECORD_DTYPE, count=n, offset=HEADER_SIZE)

    ch = rec["ch"]
    t = rec["t"]
    bad = np.flatnonzero(ch >= channel_count)
    if bad.size:
        i = int(bad[0])
        raise PtagFormatError(
            f"record {i} channel {ch[i]} >= channel count {channel_count}",
            HEADER_SIZE + i * RECORD_SIZE,
        )
    if n > 1:
        dt = np.diff(t.astype(np.int64))
        bad = np.flatnonzero(dt < 0)
        if bad.size:
            i = int(bad[0]) + 1
            raise PtagFormatError(
                f"record {i} out of time order", HEADER_SIZE + i * RECORD_SIZE
            )
        if ((dt == 0) & (np.diff(ch.astype(np.int16)) < 0)).any():
            # equal-time ties may be stored in any channel order; bring
            # them into the canonical (time, channel) order
            order = np.lexsort((ch, t))
            ch = ch[order]
            t = t[order]
    if duration_ps is None:
        duration_ps = int(t[-1]) + 1 if n else 1
    return TimeTagStream(
        resolution_ps=int(resolution),
        duration_ps=int(duration_ps),
        channel_count=int(channel_count),
        channels=ch.copy(),
        times=t.copy(),
    )
