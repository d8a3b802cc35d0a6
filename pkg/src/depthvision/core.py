"""Shared value types, pixel-range conversions and image serialization.

Images are stored as numpy arrays shaped ``(height, width, channels)``,
row-major, addressed as ``(v, u) = (row, column)``.  The canonical colour
range is [0, 1]; the signed range [-1, 1] is only used at the neural boundary.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DVIM_MAGIC = b"DVIM"
_DVIM_HEADER = struct.Struct("<4sIII")


class ValidationError(ValueError):
    """Raised when a value type is constructed with data violating its invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _check_range(a: np.ndarray, lo: float, hi: float, what: str) -> None:
    if a.size and not np.all(np.isfinite(a)):
        raise ValidationError(f"{what}: non-finite values")
    if a.size and (a.min() < lo or a.max() > hi):
        raise ValidationError(
            f"{what}: values outside [{lo}, {hi}] (min={a.min():.6g}, max={a.max():.6g})"
        )


@dataclass(frozen=True)
class ImageRGB:
    """Three-channel image with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        a = _frozen(self.data)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ValidationError(f"ImageRGB expects (H, W, 3), got {a.shape}")
        _check_range(a, 0.0, 1.0, "ImageRGB")
        object.__setattr__(self, "data", a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def uniform(cls, height: int, width: int, value) -> "ImageRGB":
        return cls(np.broadcast_to(np.asarray(value, dtype=np.float64), (height, width, 3)))


@dataclass(frozen=True)
class ImageSigned:
    """Image with any number of channels and values in [-1, 1]."""

    data: np.ndarray

    def __post_init__(self):
        a = _frozen(self.data)
        if a.ndim != 3:
            raise ValidationError(f"ImageSigned expects (H, W, C), got {a.shape}")
        _check_range(a, -1.0, 1.0, "ImageSigned")
        object.__setattr__(self, "data", a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class GrayImage:
    luminance: np.ndarray

    def __post_init__(self):
        a = _frozen(self.luminance)
        if a.ndim != 2:
            raise ValidationError(f"GrayImage expects (H, W), got {a.shape}")
        # Rec. 709 weights sum to 1 only up to rounding, so allow one ulp of slack.
        _check_range(a, 0.0, 1.0 + 1e-12, "GrayImage")
        object.__setattr__(self, "luminance", a)

    @property
    def height(self) -> int:
        return self.luminance.shape[0]

    @property
    def width(self) -> int:
        return self.luminance.shape[1]


@dataclass(frozen=True)
class DepthMap:
    """Depth grid in meters with a validity mask.

    Invalid cells hold 0.0; nothing downstream reads them.
    """

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        d = np.array(self.depth, dtype=np.float64)
        m = np.ascontiguousarray(self.valid, dtype=bool)
        if d.ndim != 2 or d.shape != m.shape:
            raise ValidationError(f"DepthMap depth {d.shape} and mask {m.shape} must be equal 2-D")
        vd = d[m]
        if vd.size and (not np.all(np.isfinite(vd)) or vd.min() < 0):
            raise ValidationError("DepthMap: valid depths must be finite and >= 0")
        d[~m] = 0.0
        d.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", m)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @classmethod
    def dense(cls, depth: np.ndarray) -> "DepthMap":
        depth = np.asarray(depth, dtype=np.float64)
        return cls(depth, np.ones(depth.shape, dtype=bool))


@dataclass(frozen=True)
class PointCloud:
    """``(N, 3)`` points in meters plus optional per-point intensity."""

    points: np.ndarray
    intensity: np.ndarray | None = field(default=None)

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValidationError("PointCloud: non-finite coordinates")
        p = np.ascontiguousarray(p)
        p.setflags(write=False)
        object.__setattr__(self, "points", p)
        if self.intensity is not None:
            i = np.ascontiguousarray(self.intensity, dtype=np.float64).reshape(-1)
            if i.shape[0] != p.shape[0]:
                raise ValidationError("PointCloud: intensity length differs from point count")
            i.setflags(write=False)
            object.__setattr__(self, "intensity", i)

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))

    @staticmethod
    def concatenate(clouds: list["PointCloud"]) -> "PointCloud":
        pts = np.concatenate([c.points for c in clouds]) if clouds else np.zeros((0, 3))
        if clouds and all(c.intensity is not None for c in clouds):
            inten = np.concatenate([c.intensity for c in clouds])
        else:
            inten = None
        return PointCloud(pts, inten)


def to_signed(img: ImageRGB) -> ImageSigned:
    return ImageSigned(2.0 * img.data - 1.0)


def from_signed(img: ImageSigned) -> ImageRGB:
    return ImageRGB(np.clip((img.data + 1.0) / 2.0, 0.0, 1.0))


# --- serialization ---------------------------------------------------------


def quantize8(data: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to uint8 with ``round(255 * v)``."""
    return np.rint(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_png(img: ImageRGB) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(quantize8(img.data), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> ImageRGB:
    from PIL import Image

    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImageRGB(arr)


def write_png(path, img: ImageRGB) -> None:
    Path(path).write_bytes(encode_png(img))


def read_png(path) -> ImageRGB:
    return decode_png(Path(path).read_bytes())


def write_dvim(path, data: np.ndarray) -> None:
    """Lossless float64 dump: 16-byte header then little-endian samples.

    ``data`` is ``(H, W)`` or ``(H, W, C)``.
    """
    a = np.asarray(data, dtype="<f8")
    if a.ndim == 2:
        a = a[:, :, None]
    h, w, c = a.shape
    with open(path, "wb") as fh:
        fh.write(_DVIM_HEADER.pack(DVIM_MAGIC, w, h, c))
        fh.write(np.ascontiguousarray(a).tobytes())


def read_dvim(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _DVIM_HEADER.size:
        raise ValueError(f"{path}: truncated DVIM header")
    magic, w, h, c = _DVIM_HEADER.unpack_from(raw)
    if magic != DVIM_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = raw[_DVIM_HEADER.size:]
    if len(body) != 8 * w * h * c:
        raise ValueError(f"{path}: expected {8 * w * h * c} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(h, w, c).astype(np.float64)


def save_depth(path, dm: DepthMap) -> None:
    write_dvim(path, np.stack([dm.depth, dm.valid.astype(np.float64)], axis=-1))


def load_depth(path) -> DepthMap:
    a = read_dvim(path)
    if a.shape[2] == 1:
        return DepthMap.dense(a[:, :, 0])
    if a.shape[2] != 2:
        raise ValueError(f"{path}: depth dump needs 1 or 2 channels, got {a.shape[2]}")
    return DepthMap(a[:, :, 0], a[:, :, 1] > 0.5)


def load_image(path) -> ImageRGB:
    """Read an RGB image from ``.png`` or a 3-channel ``.dvim`` dump."""
    if str(path).endswith(".dvim"):
        return ImageRGB(read_dvim(path))
    return read_png(path)


def save_image(path, img: ImageRGB) -> None:
    if str(path).endswith(".dvim"):
        write_dvim(path, img.data)
    else:
        write_png(path, img)
