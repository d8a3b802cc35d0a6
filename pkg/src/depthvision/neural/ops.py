"""Functional forward/backward primitives on NCHW arrays.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


def conv_out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def tconv_out_size(n: int, k: int, s: int, p: int) -> int:
    return (n - 1) * s - 2 * p + k


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(x, k, s, p):
    """``(N, C, H, W)`` -> channel-major columns ``(C*k*k, N*Ho*Wo)``."""
    n, c, h, w = x.shape
    ho, wo = conv_out_size(h, k, s, p), conv_out_size(w, k, s, p)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"input {x.shape} too small for kernel {k}, stride {s}, pad {p}")
    win = sliding_window_view(_pad(x, p), (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo), ho, wo


def _col2im(cols, xshape, k, s, p, ho, wo):
    """Adjoint of :func:`_im2col`; ``cols`` is ``(C*k*k, N*Ho*Wo)``."""
    n, c, h, w = xshape
    cols = cols.reshape(c, k, k, n, ho, wo)
    out = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += cols[:, i, j]
    return np.ascontiguousarray(out[:, :, p:p + h, p:p + w].transpose(1, 0, 2, 3))


def _check_conv(x, w, b, cin_axis):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"expected 4-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[cin_axis]:
        raise ShapeError(f"channel mismatch: input {x.shape} vs weight {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"square kernels only, got weight {w.shape}")
    if b is not None and b.shape != (w.shape[1 - cin_axis],):
        raise ShapeError(f"bias {b.shape} does not match weight {w.shape}")


def _chan_major(a):
    # (N, C, H, W) -> (C, N*H*W)
    return a.transpose(1, 0, 2, 3).reshape(a.shape[1], -1)


def _from_chan_major(a, n, h, w):
    return np.ascontiguousarray(a.reshape(-1, n, h, w).transpose(1, 0, 2, 3))


def conv2d_forward(x, w, b=None, stride=1, pad=0):
    """Cross-correlation; ``w`` is ``(Cout, Cin, k, k)``."""
    _check_conv(x, w, b, 1)
    n = x.shape[0]
    f, _, k, _ = w.shape
    cols, ho, wo = _im2col(x, k, stride, pad)
    y = w.reshape(f, -1) @ cols
    if b is not None:
        y += b[:, None]
    return _from_chan_major(y, n, ho, wo), (x.shape, cols, w, stride, pad, ho, wo, b is not None)


def conv2d_backward(gy, cache):
    xshape, cols, w, s, p, ho, wo, has_b = cache
    f, c, k, _ = w.shape
    n = xshape[0]
    if gy.shape != (n, f, ho, wo):
        raise ShapeError(f"upstream gradient {gy.shape} vs output {(n, f, ho, wo)}")
    g2 = _chan_major(gy)
    gw = (g2 @ cols.T).reshape(w.shape)
    gb = g2.sum(axis=1) if has_b else None
    gx = _col2im(w.reshape(f, -1).T @ g2, xshape, k, s, p, ho, wo)
    return gx, gw, gb


def tconv2d_forward(x, w, b=None, stride=1, pad=0):
    """Transposed convolution; ``w`` is ``(Cin, Cout, k, k)``.

    Output size is ``(H - 1) * stride - 2 * pad + k``.
    """
    _check_conv(x, w, b, 0)
    n, cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    ho, wo = tconv_out_size(h, k, stride, pad), tconv_out_size(wd, k, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"input {x.shape} gives empty transposed-conv output")
    x2 = _chan_major(x)
    y = _col2im(w.reshape(cin, -1).T @ x2, (n, cout, ho, wo), k, stride, pad, h, wd)
    if b is not None:
        y += b[None, :, None, None]
    return y, (x2, x.shape, w, stride, pad, b is not None)


def tconv2d_backward(gy, cache):
    x2, xshape, w, s, p, has_b = cache
    n, cin, h, wd = xshape
    k = w.shape[2]
    gcols, gh, gw_ = _im2col(gy, k, s, p)
    if (gh, gw_) != (h, wd):
        raise ShapeError(f"upstream gradient {gy.shape} inconsistent with input {xshape}")
    gx = _from_chan_major(w.reshape(cin, -1) @ gcols, n, h, wd)
    gw = (x2 @ gcols.T).reshape(w.shape)
    gb = gy.sum(axis=(0, 2, 3)) if has_b else None
    return gx, gw, gb


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(gy, mask):
    return gy * mask


def leaky_relu_forward(x, slope=LEAKY_SLOPE):
    scale = np.where(x > 0, 1.0, slope).astype(x.dtype)
    return x * scale, scale


def leaky_relu_backward(gy, scale):
    return gy * scale


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(gy, y):
    return gy * (1.0 - y * y)


def concat_forward(xs):
    """Concatenate along channels."""
    if not xs:
        raise ShapeError("concat of nothing")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != 4 or x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ShapeError(f"concat shape mismatch: {ref} vs {x.shape}")
    return np.concatenate(xs, axis=1), [x.shape[1] for x in xs]


def concat_backward(gy, sizes):
    return np.split(gy, np.cumsum(sizes)[:-1], axis=1)


def clamp_forward(x, lo=-1.0, hi=1.0):
    mask = (x >= lo) & (x <= hi)
    return np.clip(x, lo, hi), mask


def clamp_backward(gy, mask):
    return gy * mask


def bce_with_logits_forward(z, target: float):
    """Mean binary cross-entropy against a constant label."""
    loss = np.maximum(z, 0) - z * target + np.log1p(np.exp(-np.abs(z)))
    return float(loss.mean()), (z, target)


def bce_with_logits_backward(g, cache):
    z, target = cache
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return g * (sig - target) / z.size


def l1_forward(a, b):
    d = a - b
    return float(np.abs(d).mean()), d


def l1_backward(g, d):
    return g * np.sign(d) / d.size
