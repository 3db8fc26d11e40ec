"""Minimal reader for continuous EDF / EDF+C files.

Only what the pipeline needs: one common sampling rate across data signals,
16-bit little-endian samples, affine digital-to-physical scaling. EDF+
annotation signals are skipped, discontinuous (EDF+D) files are rejected.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .recording import Recording

HEADER_BYTES = 256
SIGNAL_HEADER_BYTES = 256
ANNOTATION_LABEL = "EDF Annotations"

# (field, width) in the order they appear in the per-signal header block
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefilter", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


class EdfError(ValueError):
    """Base class for EDF decoding failures."""


class EdfHeaderError(EdfError):
    """Header is malformed (bad magic, width or unparsable field)."""


class EdfTruncatedError(EdfError):
    """File holds fewer data records than the header declares."""


class EdfScalingError(EdfError):
    """A signal declares a zero digital range."""


class EdfSampleRateError(EdfError):
    """Data signals do not share one sampling rate."""


def _ascii(raw: bytes, what: str) -> str:
    try:
        return raw.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise EdfHeaderError(f"{what}: non-ASCII bytes in header field") from exc


def _number(raw: bytes, what: str, kind=float):
    text = _ascii(raw, what)
    try:
        return kind(text)
    except ValueError as exc:
        raise EdfHeaderError(f"{what}: cannot parse {text!r} as {kind.__name__}") from exc


def read_edf_header(buf: bytes) -> dict:
    """Parse the fixed-width ASCII header. Returns a plain dict."""
    if len(buf) < HEADER_BYTES:
        raise EdfHeaderError(f"file is {len(buf)} bytes, shorter than the {HEADER_BYTES}-byte header")
    if buf[0:8] != b"0       ":
        raise EdfHeaderError(f"bad version field {buf[0:8]!r}, expected b'0       '")
    hdr = {
        "patient": _ascii(buf[8:88], "patient"),
        "recording": _ascii(buf[88:168], "recording"),
        "startdate": _ascii(buf[168:176], "startdate"),
        "starttime": _ascii(buf[176:184], "starttime"),
        "header_bytes": _number(buf[184:192], "header_bytes", int),
        "reserved": _ascii(buf[192:236], "reserved"),
        "n_records": _number(buf[236:244], "n_records", int),
        "record_duration": _number(buf[244:252], "record_duration"),
        "n_signals": _number(buf[252:256], "n_signals", int),
    }
    ns = hdr["n_signals"]
    if ns < 1:
        raise EdfHeaderError(f"n_signals must be >= 1, got {ns}")
    expected = HEADER_BYTES + SIGNAL_HEADER_BYTES * ns
    if hdr["header_bytes"] != expected:
        raise EdfHeaderError(
            f"header_bytes field says {hdr['header_bytes']}, but {ns} signals need {expected}"
        )
    if len(buf) < expected:
        raise EdfHeaderError(f"file ends inside the signal header ({len(buf)} < {expected} bytes)")
    if hdr["reserved"].startswith("EDF+D"):
        raise EdfHeaderError("EDF+D (discontinuous) recordings are not supported")
    if not hdr["record_duration"] > 0:
        raise EdfHeaderError(f"record duration must be positive, got {hdr['record_duration']}")

    signals = [dict() for _ in range(ns)]
    pos = HEADER_BYTES
    for name, width in _SIGNAL_FIELDS:
        for i in range(ns):
            raw = buf[pos : pos + width]
            pos += width
            what = f"signal {i} {name}"
            if name in ("physical_min", "physical_max"):
                signals[i][name] = _number(raw, what)
            elif name in ("digital_min", "digital_max", "samples_per_record"):
                signals[i][name] = _number(raw, what, int)
            else:
                signals[i][name] = _ascii(raw, what)
    hdr["signals"] = signals
    return hdr


def read_edf(path) -> Recording:
    """Read an EDF file into a :class:`Recording` (float64 physical values)."""
    path = Path(path)
    buf = path.read_bytes()
    hdr = read_edf_header(buf)
    signals = hdr["signals"]
    spr = [s["samples_per_record"] for s in signals]
    if any(n < 1 for n in spr):
        raise EdfHeaderError(f"samples_per_record must be >= 1, got {spr}")

    data_idx = [i for i, s in enumerate(signals) if s["label"] != ANNOTATION_LABEL]
    if not data_idx:
        raise EdfHeaderError("file contains no data signals")
    rates = {spr[i] for i in data_idx}
    if len(rates) != 1:
        detail = ", ".join(f"{signals[i]['label']}={spr[i] / hdr['record_duration']:g} Hz" for i in data_idx)
        raise EdfSampleRateError(f"mixed sampling rates are not supported: {detail}")
    for i in data_idx:
        s = signals[i]
        if s["digital_max"] == s["digital_min"]:
            raise EdfScalingError(f"signal {s['label']!r} has zero digital range")

    body = memoryview(buf)[hdr["header_bytes"] :]
    record_samples = sum(spr)
    record_bytes = 2 * record_samples
    n_records = hdr["n_records"]
    if n_records == -1:
        n_records = len(body) // record_bytes
    if n_records < 1:
        raise EdfHeaderError(f"no data records (n_records={hdr['n_records']})")
    if len(body) < n_records * record_bytes:
        have = len(body) // record_bytes
        raise EdfTruncatedError(
            f"header declares {n_records} data records but file holds {have} complete record(s)"
        )

    digital = np.frombuffer(body[: n_records * record_bytes], dtype="<i2").reshape(n_records, record_samples)
    offsets = np.concatenate([[0], np.cumsum(spr)])
    rows = []
    for i in data_idx:
        s = signals[i]
        d = digital[:, offsets[i] : offsets[i + 1]].reshape(-1).astype(np.float64)
        gain = (s["physical_max"] - s["physical_min"]) / (s["digital_max"] - s["digital_min"])
        rows.append(s["physical_min"] + (d - s["digital_min"]) * gain)

    return Recording(
        channels=[signals[i]["label"] for i in data_idx],
        sample_rate=spr[data_idx[0]] / hdr["record_duration"],
        data=np.vstack(rows),
        stage_annotations=None,
        id=path.stem,
    )
