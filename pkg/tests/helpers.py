"""Shared fixtures-by-function: EDF crafting, finite differences, small windows."""

from __future__ import annotations

import numpy as np

from dualstream.autodiff import Tensor
from dualstream.prep import Window


def edf_bytes(signals, record_duration=1.0, n_records=None, declared_records=None,
              reserved="", version=b"0       ", header_bytes=None):
    """Craft an EDF file.

    ``signals`` is a list of dicts with keys label, digital (int array of
    shape (n_records, samples_per_record)), physical_min/max, digital_min/max.
    """
    ns = len(signals)
    n_records = signals[0]["digital"].shape[0] if n_records is None else n_records
    declared = n_records if declared_records is None else declared_records

    def field(value, width):
        text = str(value).encode("ascii")
        assert len(text) <= width, (value, width)
        return text.ljust(width)

    head = version + field("X X X X", 80) + field("Startdate X X X X", 80)
    head += field("01.01.20", 8) + field("00.00.00", 8)
    head += field(256 + 256 * ns if header_bytes is None else header_bytes, 8)
    head += field(reserved, 44) + field(declared, 8) + field(record_duration, 8) + field(ns, 4)
    cols = [
        ("label", 16), ("transducer", 80), ("dimension", 8), ("physical_min", 8), ("physical_max", 8),
        ("digital_min", 8), ("digital_max", 8), ("prefilter", 80), ("spr", 8), ("reserved", 32),
    ]
    for name, width in cols:
        for s in signals:
            value = {"transducer": "", "dimension": "uV", "prefilter": "", "reserved": "",
                     "spr": s["digital"].shape[1]}.get(name, s.get(name))
            head += field(value, width)
    body = b""
    for r in range(n_records):
        for s in signals:
            body += np.asarray(s["digital"][r], dtype="<i2").tobytes()
    return head + body


def signal(label, digital, pmin=-1000.0, pmax=1000.0, dmin=-32768, dmax=32767):
    return dict(label=label, digital=np.asarray(digital), physical_min=pmin, physical_max=pmax,
                digital_min=dmin, digital_max=dmax)


def numeric_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


def check_gradients(build, inputs: dict[str, np.ndarray], seed: int = 0, step: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``build(tensors)`` returns an output Tensor; a fixed random projection
    turns it into a scalar so every output element contributes.
    """
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in inputs.items()}
    out = build(tensors)
    proj = np.random.default_rng(seed).standard_normal(out.shape)
    out.backward(proj)
    worst = 0.0
    for name, t in tensors.items():
        def scalar():
            return float(np.sum(build({k: Tensor(v.values) for k, v in tensors.items()}).values * proj))
        num = numeric_grad(scalar, t.values, step)
        worst = max(worst, rel_err(t.grad, num))
    return worst


def make_windows(times_s, rec_id="rec", n_channels=2, n_times=300, sample_rate=10.0, seed=0, stages=None):
    rng = np.random.default_rng(seed)
    out = []
    for i, t in enumerate(times_s):
        stage = None if stages is None else stages[i]
        out.append(Window(rng.standard_normal((n_channels, n_times)), int(round(t * sample_rate)), rec_id,
                          sample_rate, stage))
    return out
