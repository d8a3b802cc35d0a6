"""Bilinear resampling between the crop size and the generator size."""

import numpy as np

RESIZE_VERSION = "bilinear-halfpixel-v1"


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centers, edge-clamped
    x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    i0 = np.floor(x).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, x - i0


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize ``(H, W)`` or ``(H, W, C)``; identity when the size is unchanged."""
    a = np.asarray(img, dtype=np.float64)
    if a.shape[:2] == (height, width):
        return a.copy()
    r0, r1, fr = _axis_weights(a.shape[0], height)
    c0, c1, fc = _axis_weights(a.shape[1], width)
    if a.ndim == 3:
        fr = fr[:, None, None]
        fc = fc[None, :, None]
    else:
        fr = fr[:, None]
        fc = fc[None, :]
    top = a[r0][:, c0] * (1 - fc) + a[r0][:, c1] * fc
    bot = a[r1][:, c0] * (1 - fc) + a[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr
