"""Versioned little-endian raw format for recordings.

Layout (all integers little-endian)::

    magic          4 bytes   b"DSRW"
    version        uint16    1
    n_channels     uint32
    sample_rate    float64
    n_samples      uint64
    id             uint16 length + UTF-8 bytes
    labels         n_channels x (uint16 length + UTF-8 bytes)
    samples        n_channels * n_samples float32, channel-major
    has_stages     uint8     0 or 1
    [n_annotations uint32, then n_annotations x (start uint64, stage uint8)]

Samples are stored as float32; a round trip is bit-exact for data that is
already float32-representable (the synthetic generator emits float32).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .recording import Recording, SleepStage

MAGIC = b"DSRW"
VERSION = 1


class RawFormatError(ValueError):
    pass


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise RawFormatError(f"string too long for raw header: {s[:40]!r}...")
    return struct.pack("<H", len(b)) + b


def encode_raw(rec: Recording) -> bytes:
    parts = [
        MAGIC,
        struct.pack("<HIdQ", VERSION, rec.n_channels, float(rec.sample_rate), rec.n_samples),
        _pack_str(rec.id),
    ]
    parts.extend(_pack_str(c) for c in rec.channels)
    parts.append(np.ascontiguousarray(rec.data, dtype="<f4").tobytes())
    if rec.stage_annotations is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<BI", 1, len(rec.stage_annotations)))
        parts.extend(struct.pack("<QB", s, int(st)) for s, st in rec.stage_annotations)
    return b"".join(parts)


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise RawFormatError(
                f"length mismatch: need {n} bytes at offset {self.pos}, file has {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def decode_raw(buf: bytes) -> Recording:
    cur = _Cursor(buf)
    magic = cur.take(4)
    if magic != MAGIC:
        raise RawFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, n_channels, sample_rate, n_samples = cur.unpack("<HIdQ")
    if version != VERSION:
        raise RawFormatError(f"unsupported raw format version {version} (reader supports {VERSION})")
    rec_id = cur.string()
    channels = [cur.string() for _ in range(n_channels)]
    data = np.frombuffer(cur.take(4 * n_channels * n_samples), dtype="<f4")
    data = data.reshape(n_channels, n_samples).astype(np.float32)
    (has_stages,) = cur.unpack("<B")
    anns = None
    if has_stages:
        (n_ann,) = cur.unpack("<I")
        anns = []
        for _ in range(n_ann):
            start, stage = cur.unpack("<QB")
            anns.append((start, SleepStage(stage)))
    if cur.pos != len(buf):
        raise RawFormatError(f"length mismatch: {len(buf) - cur.pos} trailing bytes after annotation block")
    return Recording(channels=channels, sample_rate=sample_rate, data=data, stage_annotations=anns, id=rec_id)


def write_raw(rec: Recording, path) -> None:
    Path(path).write_bytes(encode_raw(rec))


def read_raw(path) -> Recording:
    return decode_raw(Path(path).read_bytes())
