"""StagerNet-style embedder, contrastive heads and checkpoint persistence."""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, ShapeError, Tensor


@dataclass(frozen=True)
class EmbedderConfig:
    n_channels: int = 2
    n_times: int = 3000
    n_conv_maps: int = 16
    temporal_kernel: int = 50
    pool_size: int = 13
    dropout_p: float = 0.5
    embedding_dim: int = 100
    use_batch_norm: bool = True
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def lengths(self) -> tuple[int, int, int, int]:
        """Time lengths after conv1, pool1, conv2, pool2."""
        c1 = self.n_times - self.temporal_kernel + 1
        p1 = c1 // self.pool_size if self.pool_size > 0 else 0
        c2 = p1 - self.temporal_kernel + 1
        p2 = c2 // self.pool_size if self.pool_size > 0 else 0
        return c1, p1, c2, p2

    def validate(self) -> list[str]:
        errs = []
        for name in ("n_channels", "n_times", "n_conv_maps", "temporal_kernel", "pool_size", "embedding_dim"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            errs.append(f"dropout_p={self.dropout_p} must lie in [0, 1)")
        if not errs and min(self.lengths()) < 1:
            errs.append(f"length arithmetic leaves no time steps: conv/pool lengths {self.lengths()}")
        return errs

    @property
    def flat_dim(self) -> int:
        return self.n_conv_maps * self.n_channels * self.lengths()[3]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        C, M, K, D = self.n_channels, self.n_conv_maps, self.temporal_kernel, self.embedding_dim
        shapes = {
            "spatial.weight": (C, C),
            "spatial.bias": (C,),
            "conv1.weight": (M, 1, K),
            "conv1.bias": (M,),
            "conv2.weight": (M, M, K),
            "conv2.bias": (M,),
        }
        if self.use_batch_norm:
            shapes.update({"bn1.gamma": (M,), "bn1.beta": (M,), "bn2.gamma": (M,), "bn2.beta": (M,)})
        shapes.update({"fc.weight": (D, self.flat_dim), "fc.bias": (D,)})
        return shapes

    def bn_names(self) -> list[str]:
        return ["bn1", "bn2"] if self.use_batch_norm else []


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class StagerNet:
    """Spatial mixing, two temporal conv/pool stages, dropout, linear projection."""

    def __init__(self, cfg: EmbedderConfig, seed: int = 0):
        errs = cfg.validate()
        if errs:
            raise ShapeError("; ".join(errs))
        self.cfg = cfg
        rng = np.random.default_rng([seed, 1])
        C, M, K = cfg.n_channels, cfg.n_conv_maps, cfg.temporal_kernel
        fan_in = {"spatial": C, "conv1": K, "conv2": M * K, "fc": cfg.flat_dim}
        self.params: dict[str, Tensor] = {}
        for name, shape in cfg.param_shapes().items():
            layer, kind = name.split(".")
            if kind == "gamma":
                values = np.ones(shape)
            elif kind == "beta":
                values = np.zeros(shape)
            else:
                values = _uniform_init(rng, shape, fan_in[layer])
            self.params[name] = Tensor(values, requires_grad=True, name=name)
        self.bn = {n: BatchNormState.fresh(M, cfg.bn_momentum, cfg.bn_eps) for n in cfg.bn_names()}

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def _block(self, h: Tensor, idx: int, training: bool) -> Tensor:
        p = self.params
        h = ad.conv1d(h, p[f"conv{idx}.weight"], p[f"conv{idx}.bias"])
        # conv -> batch norm -> relu -> pool, evaluated as (batch norm + pool) -> relu:
        # relu commutes with max-pool, and the fused op normalises only the pooled values
        if self.cfg.use_batch_norm:
            h = ad.batch_norm_max_pool(h, p[f"bn{idx}.gamma"], p[f"bn{idx}.beta"], self.bn[f"bn{idx}"],
                                       training, self.cfg.pool_size)
        else:
            h = ad.max_pool1d(h, self.cfg.pool_size)
        return ad.relu(h)

    def __call__(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        cfg = self.cfg
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3 or x.shape[1:] != (cfg.n_channels, cfg.n_times):
            raise ShapeError(
                f"embedder expects (batch, {cfg.n_channels}, {cfg.n_times}) windows, got {x.shape}"
            )
        B, C = x.shape[0], cfg.n_channels
        p = self.params
        h = ad.conv_spatial(x, p["spatial.weight"], p["spatial.bias"])
        # each virtual channel becomes its own single-map row for the temporal convs
        h = ad.reshape(h, (B * C, 1, cfg.n_times))
        h = self._block(h, 1, training)
        h = self._block(h, 2, training)
        h = ad.reshape(h, (B, C, cfg.n_conv_maps, h.shape[-1]))
        h = ad.flatten(ad.permute(h, (0, 2, 1, 3)))
        h = ad.dropout(h, cfg.dropout_p, rng, training)
        return ad.linear(h, p["fc.weight"], p["fc.bias"])

    def state_arrays(self) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        params = {k: t.values.copy() for k, t in self.params.items()}
        stats = {}
        for n, st in self.bn.items():
            stats[f"{n}.running_mean"] = st.running_mean.copy()
            stats[f"{n}.running_var"] = st.running_var.copy()
        return params, stats

    def load_arrays(self, params: dict, stats: dict) -> None:
        for k, v in params.items():
            if self.params[k].shape != v.shape:
                raise ShapeError(f"{k}: expected {self.params[k].shape}, got {v.shape}")
            self.params[k].values = np.array(v, dtype=np.float64)
        for n, st in self.bn.items():
            st.running_mean = np.array(stats[f"{n}.running_mean"], dtype=np.float64)
            st.running_var = np.array(stats[f"{n}.running_var"], dtype=np.float64)


class ContrastiveHead:
    """Absolute-difference aggregation followed by dropout and a linear logit.

    Pairs use ``|e0 - e1|``; triplets use ``(|e0 - e1|, |e1 - e2|)``.
    """

    def __init__(self, kind: str, embedding_dim: int, dropout_p: float = 0.5, seed: int = 0):
        if kind not in ("rp", "ts", "fs"):
            raise ValueError(f"unknown head kind {kind!r}")
        self.kind = kind
        self.n_inputs = 2 if kind == "rp" else 3
        self.dropout_p = dropout_p
        in_dim = embedding_dim * (self.n_inputs - 1)
        rng = np.random.default_rng([seed, 2])
        self.weight = Tensor(_uniform_init(rng, (1, in_dim), in_dim), requires_grad=True, name=f"{kind}.w")
        self.bias = Tensor(_uniform_init(rng, (1,), in_dim), requires_grad=True, name=f"{kind}.w0")

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, embeddings, training: bool = False, rng=None) -> Tensor:
        if len(embeddings) != self.n_inputs:
            raise ShapeError(f"{self.kind} head takes {self.n_inputs} embeddings, got {len(embeddings)}")
        shapes = {e.shape for e in embeddings}
        if len(shapes) != 1:
            raise ShapeError(f"{self.kind} head: embedding shapes differ: {sorted(shapes)}")
        if self.n_inputs == 2:
            z = ad.abs_diff(embeddings[0], embeddings[1])
        else:
            e0, e1, e2 = embeddings
            z = ad.concat([ad.abs_diff(e0, e1), ad.abs_diff(e1, e2)], axis=1)
        if z.shape[1] != self.weight.shape[1]:
            raise ShapeError(f"{self.kind} head expects aggregated dim {self.weight.shape[1]}, got {z.shape[1]}")
        z = ad.dropout(z, self.dropout_p, rng, training)
        return ad.reshape(ad.linear(z, self.weight, self.bias), (z.shape[0],))


def head_rp(e_t, e_t_prime, head: ContrastiveHead, training=False, rng=None) -> Tensor:
    return head([e_t, e_t_prime], training, rng)


def head_ts(e_t, e_t_prime, e_t_double_prime, head: ContrastiveHead, training=False, rng=None) -> Tensor:
    return head([e_t, e_t_prime, e_t_double_prime], training, rng)


head_fs = head_ts


# --- checkpoints ---------------------------------------------------------------

CKPT_MAGIC = b"DSTFCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(eq=False)
class EmbedderCheckpoint:
    config: EmbedderConfig
    params: dict[str, np.ndarray]
    bn_stats: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: StagerNet, **metadata) -> "EmbedderCheckpoint":
        params, stats = model.state_arrays()
        return cls(model.cfg, params, stats, dict(metadata))

    def to_model(self) -> StagerNet:
        net = StagerNet(self.config)
        net.load_arrays(self.params, self.bn_stats)
        return net

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return list(self.params.items()) + list(self.bn_stats.items())


def _expected_arrays(cfg: EmbedderConfig) -> dict[str, tuple[int, ...]]:
    shapes = dict(cfg.param_shapes())
    for n in cfg.bn_names():
        shapes[f"{n}.running_mean"] = (cfg.n_conv_maps,)
        shapes[f"{n}.running_var"] = (cfg.n_conv_maps,)
    return shapes


def encode_checkpoint(ckpt: EmbedderCheckpoint) -> bytes:
    """``magic | u32 version | u64 header_len | JSON header | float64 LE arrays | u32 crc32``."""
    arrays = ckpt.arrays()
    header = {
        "config": asdict(ckpt.config),
        "metadata": ckpt.metadata,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    blob = CKPT_MAGIC + struct.pack("<IQ", CKPT_VERSION, len(hbytes)) + hbytes + body
    return blob + struct.pack("<I", zlib.crc32(blob))


def decode_checkpoint(buf: bytes) -> EmbedderCheckpoint:
    fixed = len(CKPT_MAGIC) + 12
    if len(buf) < fixed + 4:
        raise CheckpointError(f"corrupt checkpoint: only {len(buf)} bytes")
    if buf[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError("corrupt checkpoint: bad magic")
    version, hlen = struct.unpack("<IQ", buf[len(CKPT_MAGIC) : fixed])
    if version != CKPT_VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {CKPT_VERSION})")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointError("corrupt checkpoint: checksum mismatch (truncated or damaged file)")
    try:
        header = json.loads(buf[fixed : fixed + hlen].decode("utf-8"))
        cfg = EmbedderConfig(**header["config"])
    except (ValueError, TypeError, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    expected = _expected_arrays(cfg)
    pos = fixed + hlen
    params, stats = {}, {}
    for entry in header["arrays"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected:
            raise CheckpointError(f"unknown parameter {name!r} for this architecture")
        if shape != expected[name]:
            raise CheckpointError(f"shape mismatch for {name}: file has {shape}, config implies {expected[name]}")
        n = int(np.prod(shape)) * 8
        if pos + n > len(buf) - 4:
            raise CheckpointError("corrupt checkpoint: array data truncated")
        arr = np.frombuffer(buf[pos : pos + n], dtype="<f8").reshape(shape).astype(np.float64)
        pos += n
        (stats if "running_" in name else params)[name] = arr
    if pos != len(buf) - 4:
        raise CheckpointError("corrupt checkpoint: trailing bytes")
    missing = sorted(set(expected) - set(params) - set(stats))
    if missing:
        raise CheckpointError(f"checkpoint lacks arrays {missing}")
    return EmbedderCheckpoint(cfg, params, stats, header["metadata"])


def save_checkpoint(ckpt: EmbedderCheckpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> EmbedderCheckpoint:
    return decode_checkpoint(Path(path).read_bytes())
