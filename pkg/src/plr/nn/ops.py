"""Primitive tensor ops, each paired with its analytic backward pass.

Conventions: conv2d is cross-correlation with zero "same" padding at
stride 1; maxpool halves both spatial dims routing gradients through the
argmax; upsampling is nearest-neighbor x2 (its backward is a 2x2 block sum).
Forward functions return (output, cache); backward functions consume the
cache and the upstream gradient. Key ops raise on non-finite outputs so a
diverging run fails loudly instead of training on NaNs.
"""

import numpy as np

BCE_CLAMP = 1e-7


def _require_finite(arr, what):
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values in {what}")


def conv2d_forward(x, w, b):
    """Same-padded stride-1 cross-correlation via im2col.

    x: (B, C, H, W); w: (O, C, k, k) with odd k; b: (O,).
    """
    bsz, c, h, wd = x.shape
    o, cw, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ValueError("kernel must be square with odd side")
    if cw != c:
        raise ValueError(f"channel mismatch: input {c}, kernel {cw}")
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = np.ascontiguousarray(
        windows.transpose(0, 1, 4, 5, 2, 3)).reshape(bsz, c * k * k, h * wd)
    wm = w.reshape(o, c * k * k)
    out = np.ascontiguousarray(
        np.matmul(wm, cols).reshape(bsz, o, h, wd)) + b[None, :, None, None]
    _require_finite(out, "conv2d output")
    return out, (cols, w, x.shape)


def conv2d_backward(dy, cache):
    """Exact analytic gradients w.r.t. input, weights, and bias."""
    cols, w, x_shape = cache
    bsz, c, h, wd = x_shape
    o, _, k, _ = w.shape
    pad = k // 2
    dyf = dy.reshape(bsz, o, h * wd)
    db = dy.sum(axis=(0, 2, 3))
    dw = np.matmul(dyf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    wm = w.reshape(o, c * k * k)
    dcols = np.matmul(wm.T, dyf).reshape(bsz, c, k, k, h, wd)
    dxp = np.zeros((bsz, c, h + 2 * pad, wd + 2 * pad), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, i, j]
    dx = dxp[:, :, pad:pad + h, pad:pad + wd]
    return dx, dw, db


def relu_forward(x):
    mask = x > 0
    return np.where(mask, x, x.dtype.type(0)), mask


def relu_backward(dy, mask):
    return np.where(mask, dy, dy.dtype.type(0))


def maxpool2_forward(x):
    """2x2 stride-2 max pooling; spatial dims must be even."""
    bsz, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    tiles = x.reshape(bsz, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(bsz, c, h // 2, w // 2, 4)
    idx = tiles.argmax(axis=-1)
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2_backward(dy, cache):
    idx, x_shape = cache
    bsz, c, h, w = x_shape
    dtiles = np.zeros((bsz, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(dtiles, idx[..., None], dy[..., None], axis=-1)
    return dtiles.reshape(bsz, c, h // 2, w // 2, 2, 2) \
        .transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


def upsample_nearest2_forward(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3), x.shape


def upsample_nearest2_backward(dy, x_shape):
    bsz, c, h, w = x_shape
    return dy.reshape(bsz, c, h, 2, w, 2).sum(axis=(3, 5))


def concat_channels_forward(a, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concat {a.shape} with {b.shape}")
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_channels_backward(dy, split):
    return dy[:, :split], dy[:, split:]


def global_avg_pool_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dy, x_shape):
    bsz, c, h, w = x_shape
    return np.broadcast_to(dy[:, :, None, None] / dy.dtype.type(h * w), x_shape).copy()


def dense_forward(x, w, b):
    """x: (B, F); w: (U, F); b: (U,)."""
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"feature mismatch: {x.shape} vs {w.shape}")
    out = x @ w.T + b
    _require_finite(out, "dense output")
    return out, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def sigmoid_forward(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_backward(dy, y):
    return dy * y * (1.0 - y)


def mse_loss(pred, target):
    """Mean over all elements of (pred - target)^2; returns (loss, dpred)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    _require_finite(np.asarray(loss), "mse loss")
    return loss, (2.0 / diff.size) * diff


def bce_loss(probs, labels):
    """Binary cross-entropy, probabilities clamped to [1e-7, 1 - 1e-7].

    probs and labels are (B,) arrays; the loss is averaged over the batch and
    the returned gradient is w.r.t. the (clamped) probabilities.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=probs.dtype)
    if probs.shape != labels.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {labels.shape}")
    p = np.clip(probs, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    loss = float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log1p(-p)))
    _require_finite(np.asarray(loss), "bce loss")
    dp = (p - labels) / (p * (1.0 - p)) / n
    return loss, dp
