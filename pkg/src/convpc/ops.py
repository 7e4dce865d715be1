"""Differentiable layer operators on `Tensor`.

Spatial operators take ``[B, C, D, H, W]`` inputs; an unbatched
``[C, D, H, W]`` input is accepted and returned unbatched. Normalization
operators treat axis 1 as the channel axis.
"""

from __future__ import annotations

import itertools

import numpy as np

from .tensor import Tensor, as_tensor, make_op


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 4:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 5:
        raise ValueError(f"expected a 4-D or 5-D volume, got shape {x.shape}")
    return x, False


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return y.reshape(y.shape[1:]) if squeeze else y


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; ``weight`` is ``(n_out, n_in)``."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"dense: input width {x.shape[-1]} != weight input extent {weight.shape[1]}")
    a, w = x.data, weight.data
    out = a @ w.T
    parents = (x, weight)
    if bias is not None:
        out = out + bias.data
        parents = parents + (bias,)

    def back(g):
        gx = g @ w
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ a.reshape(-1, a.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_op(out, parents, back)


def conv3d(x: Tensor, weight: Tensor, padding: int = 1) -> Tensor:
    """Stride-1 3-D cross-correlation without bias.

    ``weight`` is ``(C_out, C_in, k, k, k)``; output extent per axis is
    ``n + 2*padding - k + 1``.
    """
    x, squeeze = _batched(as_tensor(x))
    c_out, c_in, k = weight.shape[0], weight.shape[1], weight.shape[2]
    if weight.shape[2:] != (k, k, k):
        raise ValueError(f"conv3d: kernel must be cubic, got {weight.shape[2:]}")
    if x.shape[1] != c_in:
        raise ValueError(f"conv3d: input has {x.shape[1]} channels, weight expects {c_in}")
    batch = x.shape[0]
    spatial = x.shape[2:]
    out_sp = tuple(n + 2 * padding - k + 1 for n in spatial)
    if min(out_sp) <= 0:
        raise ValueError(f"conv3d: non-positive output extent {out_sp}")

    pad = ((0, 0), (0, 0)) + ((padding, padding),) * 3
    xp = np.pad(x.data, pad) if padding else x.data
    w = weight.data
    offsets = list(itertools.product(range(k), repeat=3))

    def window(arr, a, b, c):
        return arr[:, :, a : a + out_sp[0], b : b + out_sp[1], c : c + out_sp[2]]

    acc = np.zeros((c_out, batch) + out_sp, dtype=x.data.dtype)
    for a, b, c in offsets:
        acc += np.tensordot(w[:, :, a, b, c], window(xp, a, b, c), axes=([1], [1]))
    out = acc.transpose(1, 0, 2, 3, 4)

    def back(g):
        gt = g.transpose(1, 0, 2, 3, 4)  # (C_out, B, ...)
        gw = np.zeros_like(w)
        gxp = np.zeros_like(xp)
        for a, b, c in offsets:
            gw[:, :, a, b, c] = np.tensordot(gt, window(xp, a, b, c), axes=([1, 2, 3, 4], [0, 2, 3, 4]))
            window(gxp, a, b, c)[...] += np.tensordot(w[:, :, a, b, c], gt, axes=([0], [0])).transpose(1, 0, 2, 3, 4)
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding, padding:-padding]
        return gxp, gw

    return _unbatch(make_op(np.ascontiguousarray(out), (x, weight), back), squeeze)


def maxpool3d(x: Tensor) -> Tensor:
    """Max over disjoint 2x2x2 blocks (stride 2).

    The backward pass routes each block's gradient to its argmax; ties go to
    the lowest linear index.
    """
    x, squeeze = _batched(as_tensor(x))
    b, c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise ValueError(f"maxpool3d: spatial extents must be even, got {(d, h, w)}")
    blocks = (
        x.data.reshape(b, c, d // 2, 2, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(b, c, d // 2, h // 2, w // 2, 8)
    )
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = (
            gb.reshape(b, c, d // 2, h // 2, w // 2, 2, 2, 2)
            .transpose(0, 1, 2, 5, 3, 6, 4, 7)
            .reshape(b, c, d, h, w)
        )
        return (gx,)

    return _unbatch(make_op(out, (x,), back), squeeze)


def upsample_matrix(n: int, dtype=np.float64) -> np.ndarray:
    """Linear map (2n x n) for 1-D x2 upsampling with half-pixel centers."""
    m = np.zeros((2 * n, n), dtype=dtype)
    for i in range(2 * n):
        src = min(max((i + 0.5) / 2.0 - 0.5, 0.0), n - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def upsample_trilinear(x: Tensor) -> Tensor:
    """Trilinear x2 upsampling (half-pixel centers, clamped at the borders)."""
    x, squeeze = _batched(as_tensor(x))
    mats = [upsample_matrix(n, x.data.dtype) for n in x.shape[2:]]

    def apply(arr, ms):
        for axis, m in zip((2, 3, 4), ms):
            arr = np.moveaxis(np.tensordot(m, arr, axes=([1], [axis])), 0, axis)
        return arr

    out = apply(x.data, mats)
    return _unbatch(make_op(out, (x,), lambda g: (apply(g, [m.T for m in mats]),)), squeeze)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization; channels on axis 1.

    In training mode the running statistics are updated in place.
    """
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[0] == 0:
        raise ValueError(f"batch_norm: zero-size batch or missing channel axis, shape {x.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = [1] * x.ndim
    bshape[1] = x.shape[1]
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)

    if training:
        count = x.size // x.shape[1]
        mu = x.data.mean(axis=axes, keepdims=True)
        centered = x.data - mu
        var = (centered**2).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xn = centered * inv
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.reshape(-1)

        def back(g):
            gxn = g * g_
            gx = inv * (gxn - gxn.mean(axis=axes, keepdims=True) - xn * (gxn * xn).mean(axis=axes, keepdims=True))
            return gx, (g * xn).sum(axis=axes), g.sum(axis=axes)

    else:
        inv = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xn = (x.data - running_mean.reshape(bshape)) * inv

        def back(g):
            return g * g_ * inv, (g * xn).sum(axis=axes), g.sum(axis=axes)

    return make_op(xn * g_ + b_, (x, gamma, beta), back)


def instance_norm_adain(
    x: Tensor,
    scale: Tensor | None = None,
    shift: Tensor | None = None,
    eps: float = 1e-5,
    batched: bool | None = None,
) -> Tensor:
    """Instance normalization with an optional per-instance affine transform.

    ``x`` is ``[B, C, *spatial]`` or ``[C, *spatial]``; ``scale`` and ``shift``
    are ``[B, C]`` (or ``[C]``). 4-D and 5-D inputs are read as volumes;
    other ranks follow ``batched`` (inferred from ``scale`` when omitted). Statistics are per instance and channel over
    the spatial cells, with the population variance. Without ``scale`` and
    ``shift`` this is plain instance normalization.
    """
    x = as_tensor(x)
    if batched is None:
        if x.ndim in (4, 5):
            batched = x.ndim == 5
        else:
            batched = scale is None or scale.ndim == 2
    squeeze = not batched
    if squeeze:
        x = x.reshape((1,) + x.shape)
        scale = scale.reshape((1,) + scale.shape) if scale is not None else None
        shift = shift.reshape((1,) + shift.shape) if shift is not None else None
    channels = x.shape[1]
    for name, p in (("scale", scale), ("shift", shift)):
        if p is not None and p.shape != (x.shape[0], channels):
            raise ValueError(f"instance_norm_adain: {name} shape {p.shape} does not match input {x.shape[:2]}")

    axes = tuple(range(2, x.ndim))
    expand = (slice(None), slice(None)) + (None,) * len(axes)
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = centered * inv
    s = scale.data[expand] if scale is not None else 1.0
    t = shift.data[expand] if shift is not None else 0.0
    out = xn * s + t

    parents = (x,)
    if scale is not None:
        parents += (scale,)
    if shift is not None:
        parents += (shift,)

    def back(g):
        gxn = g * s
        gx = inv * (gxn - gxn.mean(axis=axes, keepdims=True) - xn * (gxn * xn).mean(axis=axes, keepdims=True))
        grads = [gx]
        if scale is not None:
            grads.append((g * xn).sum(axis=axes))
        if shift is not None:
            grads.append(g.sum(axis=axes))
        return tuple(grads)

    y = make_op(out, parents, back)
    return y.reshape(y.shape[1:]) if squeeze else y


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    a = x.data
    neg = alpha * np.expm1(np.minimum(a, 0.0))
    out = np.where(a > 0, a, neg)
    return make_op(out, (x,), lambda g: (g * np.where(a > 0, 1.0, neg + alpha),))


def dropout(
    x: Tensor,
    p: float,
    training: bool,
    rng: np.random.Generator | None = None,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Inverted dropout. A precomputed keep-``mask`` freezes the randomness."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if mask is None:
        mask = rng.random(x.shape) >= p
    keep = mask.astype(x.data.dtype) / (1.0 - p)
    return make_op(x.data * keep, (x,), lambda g: (g * keep,))


def segment_mean(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Mean of the rows of ``x`` per segment id; empty segments give zeros."""
    x = as_tensor(x)
    counts = np.bincount(segments, minlength=num_segments).astype(x.data.dtype)
    sums = np.zeros((num_segments,) + x.shape[1:], dtype=x.data.dtype)
    np.add.at(sums, segments, x.data)
    safe = np.maximum(counts, 1.0).reshape((-1,) + (1,) * (x.ndim - 1))
    return make_op(sums / safe, (x,), lambda g: ((g / safe)[segments],))


def sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out
