"""Exact nearest-neighbour densification of sparse depth maps."""

from __future__ import annotations

import numpy as np

from . import kernels
from .core import DepthMap, ImageSigned

DEFAULT_MAX_RANGE = 100.0
ENCODING_VERSION = "linear-v1"


class EmptySparseMapError(ValueError):
    pass


def densify_nearest(sparse: DepthMap) -> DepthMap:
    """Fill every pixel with the depth of its nearest valid pixel.

    Ties between equidistant valid pixels go to the smallest row, then the
    smallest column.
    """
    if not sparse.valid.any():
        raise EmptySparseMapError("empty sparse map")
    rows, cols = kernels.nearest_site(sparse.valid)
    return DepthMap.dense(sparse.depth[rows, cols])


def encode_for_generator(dense: DepthMap, max_range: float = DEFAULT_MAX_RANGE) -> ImageSigned:
    """Linear depth code: 0 m -> -1, ``max_range`` and beyond -> +1."""
    if not max_range > 0:
        raise ValueError(f"max_range must be positive, got {max_range}")
    d = np.minimum(dense.depth, max_range)
    return ImageSigned((2.0 * d / max_range - 1.0)[:, :, None])
