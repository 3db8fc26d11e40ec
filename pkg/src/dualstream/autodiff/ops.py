"""Differentiable operators used by the embedder and the contrastive heads.

Layouts: temporal ops work on the last axis; ``conv1d`` takes
``(batch, in_maps, time)``; ``batch_norm`` treats axis 1 as the feature axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy.special import expit

from .tensor import ShapeError, Tensor, as_tensor, make_result


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


# --- elementwise / structural ----------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return make_result(x.values * mask, (x,), lambda g: x._accum(g * mask))


def abs_diff(a: Tensor, b: Tensor) -> Tensor:
    """``|a - b|`` with subgradient 0 where ``a == b``."""
    _need(a.shape == b.shape, f"abs_diff: shapes {a.shape} and {b.shape} differ")
    d = a.values - b.values
    sign = np.sign(d)

    def backward(g):
        a._accum(g * sign)
        b._accum(-g * sign)

    return make_result(np.abs(d), (a, b), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    _need(len(tensors) > 0, "concat: no inputs")
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        _need(len(other) == len(ref) and all(o == r for i, (o, r) in enumerate(zip(other, ref)) if i != axis % len(ref)),
              f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, cuts, axis=axis)):
            t._accum(part)

    return make_result(np.concatenate([t.values for t in tensors], axis=axis), tensors, backward)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc
    return make_result(out, (x,), lambda g: x._accum(g.reshape(x.shape)))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    _need(sorted(axes) == list(range(x.ndim)), f"permute: {axes} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(x.values, axes), (x,), lambda g: x._accum(np.transpose(g, inv)))


def take_rows(x: Tensor, index) -> Tensor:
    """Gather rows ``x[index]``; repeated indices accumulate in backward."""
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        gx = np.zeros_like(x.values)
        np.add.at(gx, index, g)
        x._accum(gx)

    return make_result(x.values[index], (x,), backward)


# --- linear maps -------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape ``(batch, in)``, weight ``(out, in)``."""
    _need(x.ndim == 2 and weight.ndim == 2 and x.shape[1] == weight.shape[1],
          f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.values @ weight.values.T
    parents = [x, weight]
    if bias is not None:
        _need(bias.shape == (weight.shape[0],), f"linear: bias {bias.shape} for weight {weight.shape}")
        out = out + bias.values
        parents.append(bias)

    def backward(g):
        x._accum(g @ weight.values)
        weight._accum(g.T @ x.values)
        if bias is not None:
            bias._accum(g.sum(axis=0))

    return make_result(out, parents, backward)


def conv_spatial(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-time-step channel mixing: ``(B, C, T)`` with weight ``(M, C)`` -> ``(B, M, T)``."""
    _need(x.ndim == 3 and weight.ndim == 2 and x.shape[1] == weight.shape[1],
          f"conv_spatial: input {x.shape} incompatible with weight {weight.shape}")
    out = np.matmul(weight.values, x.values)
    parents = [x, weight]
    if bias is not None:
        _need(bias.shape == (weight.shape[0],), f"conv_spatial: bias {bias.shape} for weight {weight.shape}")
        out = out + bias.values[:, None]
        parents.append(bias)

    def backward(g):
        if x.requires_grad:
            x._accum(np.matmul(weight.values.T, g))
        weight._accum(np.tensordot(g, x.values, axes=([0, 2], [0, 2])))
        if bias is not None:
            bias._accum(g.sum(axis=(0, 2)))

    return make_result(out, parents, backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Valid, stride-1 cross-correlation along time.

    ``x``: ``(N, I, T)``, ``weight``: ``(O, I, K)`` -> ``(N, O, T - K + 1)``.
    Evaluated through real FFTs of length >= T, where circular and linear
    correlation agree on every valid output position.
    """
    _need(x.ndim == 3 and weight.ndim == 3 and x.shape[1] == weight.shape[1],
          f"conv1d: input {x.shape} incompatible with weight {weight.shape}")
    N, I, T = x.shape
    O, _, K = weight.shape
    _need(T >= K, f"conv1d: kernel length {K} exceeds input length {T} (input {x.shape})")
    Tp = T - K + 1
    L = sfft.next_fast_len(T, real=True)
    Xf = sfft.rfft(x.values, L, axis=-1)  # (N, I, F)
    Wf = sfft.rfft(weight.values, L, axis=-1)  # (O, I, F)
    if I == 1:
        Yf = Xf * np.conj(Wf[:, 0])[None]
    else:
        Yf = np.matmul(Xf.transpose(2, 0, 1), np.conj(Wf).transpose(2, 1, 0)).transpose(1, 2, 0)
    out = sfft.irfft(Yf, L, axis=-1)[..., :Tp]
    del Yf
    parents = [x, weight]
    if bias is not None:
        _need(bias.shape == (O,), f"conv1d: bias {bias.shape} for {O} output maps")
        out = out + bias.values[:, None]
        parents.append(bias)
    else:
        out = np.ascontiguousarray(out)

    def backward(g):
        Gf = sfft.rfft(g, L, axis=-1)  # (N, O, F)
        if x.requires_grad:
            if I == 1:
                gxf = np.einsum("nof,of->nf", Gf, Wf[:, 0])[:, None, :]
            else:
                gxf = np.matmul(Gf.transpose(2, 0, 1), Wf.transpose(2, 0, 1)).transpose(1, 2, 0)
            x._accum(sfft.irfft(gxf, L, axis=-1)[..., :T].copy())
        gwf = np.matmul(np.conj(Gf).transpose(2, 1, 0), Xf.transpose(2, 0, 1)).transpose(1, 2, 0)
        weight._accum(sfft.irfft(gwf, L, axis=-1)[..., :K].copy())
        if bias is not None:
            bias._accum(g.sum(axis=(0, 2)))

    return make_result(out, parents, backward)


# --- pooling / normalisation / regularisation --------------------------------

def max_pool1d(x: Tensor, pool: int) -> Tensor:
    """Non-overlapping max over the last axis; a trailing remainder is dropped."""
    T = x.shape[-1]
    T2 = T // pool if pool >= 1 else 0
    _need(T2 >= 1, f"max_pool1d: pool {pool} too large for length {T} (input {x.shape})")
    lead = x.shape[:-1]
    xv = x.values[..., : T2 * pool].reshape(*lead, T2, pool)
    arg = xv.argmax(axis=-1)
    out = np.take_along_axis(xv, arg[..., None], axis=-1)[..., 0]
    pos = arg + np.arange(T2) * pool

    def backward(g):
        gx = np.zeros(x.shape)
        np.put_along_axis(gx, pos, g, axis=-1)
        x._accum(gx)

    return make_result(out, (x,), backward)


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, n_features: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(np.zeros(n_features), np.ones(n_features), momentum, eps)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-feature (axis 1) normalisation.

    Training uses biased batch statistics and updates the running estimates
    (unbiased variance); evaluation uses the running estimates only.
    """
    _need(x.ndim >= 2, f"batch_norm: need at least 2-D input, got {x.shape}")
    F = x.shape[1]
    _need(gamma.shape == (F,) and beta.shape == (F,), f"batch_norm: affine params {gamma.shape} for {F} features")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, F) + (1,) * (x.ndim - 2)
    M = x.values.size // F
    if training:
        _need(M > 1, f"batch_norm: training needs more than one value per feature, input {x.shape}")
        mean = x.values.mean(axis=axes)
        xhat = x.values - mean.reshape(bshape)
        var = _feature_dot(xhat, xhat) / M
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mean
        state.running_var = (1 - m) * state.running_var + m * var * (M / (M - 1))
    else:
        mean, var = state.running_mean, state.running_var
        xhat = x.values - mean.reshape(bshape)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat *= inv.reshape(bshape)
    out = xhat * gamma.values.reshape(bshape)
    out += beta.values.reshape(bshape)

    def backward(g):
        sum_g = g.sum(axis=axes)
        sum_gx = _feature_dot(g, xhat)
        gamma._accum(sum_gx)
        beta._accum(sum_g)
        if not x.requires_grad:
            return
        scale = (gamma.values * inv).reshape(bshape)
        if training:
            gx = xhat * (-sum_gx / M).reshape(bshape)
            gx += g
            gx -= (sum_g / M).reshape(bshape)
            gx *= scale
        else:
            gx = g * scale
        x._accum(gx)

    return make_result(out, (x, gamma, beta), backward)


def batch_norm_max_pool(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool,
                        pool: int) -> Tensor:
    """``max_pool1d(batch_norm(x, ...), pool)`` for ``(N, F, T)`` input, computed cheaply.

    Per feature, normalisation is an affine map with slope ``gamma / sd``, so
    the pooled maximum of the normalised signal is the normalised maximum (or
    minimum, for a negative slope) of the raw signal. Statistics still cover
    every time step, including a remainder the pooling drops.
    """
    _need(x.ndim == 3, f"batch_norm_max_pool: need (N, F, T) input, got {x.shape}")
    N, F, T = x.shape
    _need(gamma.shape == (F,) and beta.shape == (F,), f"batch_norm: affine params {gamma.shape} for {F} features")
    T2 = T // pool if pool >= 1 else 0
    _need(T2 >= 1, f"max_pool1d: pool {pool} too large for length {T} (input {x.shape})")
    M = N * T
    if training:
        _need(M > 1, f"batch_norm: training needs more than one value per feature, input {x.shape}")
        mean = x.values.mean(axis=(0, 2))
        centred = x.values - mean[:, None]
        var = _feature_dot(centred, centred) / M
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mean
        state.running_var = (1 - m) * state.running_var + m * var * (M / (M - 1))
    else:
        mean, var = state.running_mean, state.running_var
        centred = x.values - mean[:, None]
    inv = 1.0 / np.sqrt(var + state.eps)
    slope = gamma.values * inv
    groups = centred[..., : T2 * pool].reshape(N, F, T2, pool)
    if np.all(slope >= 0):
        arg = groups.argmax(axis=-1)
    else:
        arg = np.where((slope >= 0)[None, :, None], groups.argmax(axis=-1), groups.argmin(axis=-1))
    picked = np.take_along_axis(groups, arg[..., None], axis=-1)[..., 0]
    xhat = picked * inv[:, None]
    out = xhat * gamma.values[:, None] + beta.values[:, None]
    flat = (np.arange(N * F)[:, None] * T + arg.reshape(N * F, T2) + np.arange(T2) * pool).ravel()

    def backward(g):
        sum_g = g.sum(axis=(0, 2))
        sum_gx = _feature_dot(g, xhat)
        gamma._accum(sum_gx)
        beta._accum(sum_g)
        if not x.requires_grad:
            return
        if training:
            # slope * (scatter(g) - mean(g) - xhat * mean(g * xhat)); the means run over all M values
            gx = centred * (-slope * inv * sum_gx / M)[:, None]
            gx -= (slope * sum_g / M)[:, None]
        else:
            gx = np.zeros(x.shape)
        gx.reshape(-1)[flat] += (g * slope[:, None]).ravel()
        x._accum(gx)

    return make_result(out, (x, gamma, beta), backward)


def _feature_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``sum(a * b)`` over every axis except 1."""
    n, f = a.shape[:2]
    return np.einsum("nft,nft->f", a.reshape(n, f, -1), b.reshape(n, f, -1))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity in evaluation mode."""
    if not training or p == 0.0:
        return x
    _need(0.0 <= p < 1.0, f"dropout: p={p} must lie in [0, 1)")
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_result(x.values * mask, (x,), lambda g: x._accum(g * mask))


# --- loss --------------------------------------------------------------------

def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean sigmoid binary cross-entropy, evaluated as ``max(z,0) - z*y + log1p(exp(-|z|))``."""
    y = np.asarray(target, dtype=np.float64)
    _need(y.shape == logits.shape, f"bce_with_logits: logits {logits.shape} vs targets {y.shape}")
    z = logits.values
    n = z.size
    loss = np.sum(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))) / n

    def backward(g):
        logits._accum(g * (expit(z) - y) / n)

    return make_result(np.asarray(loss), (logits,), backward)
