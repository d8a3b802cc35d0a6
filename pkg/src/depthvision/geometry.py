"""LiDAR-to-camera projection, frustum filtering, z-buffer rasterization, cropping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import DepthMap, ImageRGB, PointCloud, ValidationError


@dataclass(frozen=True)
class Extrinsic:
    """Rigid camera-from-LiDAR transform ``p_cam = R p + t``."""

    rotation: np.ndarray
    translation: np.ndarray
    tol: float = 1e-9

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        check_rotation(r, self.tol)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Extrinsic":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 form."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Extrinsic":
        rt = self.rotation.T
        return Extrinsic(rt, -rt @ self.translation, self.tol)

    def compose(self, other: "Extrinsic") -> "Extrinsic":
        """``self ∘ other``: apply ``other`` first."""
        return Extrinsic(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            max(self.tol, other.tol),
        )


def check_rotation(r: np.ndarray, tol: float) -> None:
    if not np.all(np.isfinite(r)):
        raise ValidationError("rotation has non-finite entries")
    if np.abs(r @ r.T - np.eye(3)).max() > tol:
        raise ValidationError("rotation is not orthonormal")
    if np.linalg.det(r) < 0:
        raise ValidationError("improper rotation (determinant -1)")


@dataclass(frozen=True)
class Intrinsic:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point outside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "Intrinsic":
        """Square-pixel pinhole with the principal point at the image center."""
        f = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class ProjectedPoints:
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return self.depth.shape[0]


def transform_to_camera(cloud: PointCloud, ext: Extrinsic) -> PointCloud:
    pts = cloud.points @ ext.rotation.T + ext.translation
    return PointCloud(pts, cloud.intensity)


def project(cloud_cam: PointCloud, intr: Intrinsic) -> ProjectedPoints:
    p = cloud_cam.points
    idx = np.flatnonzero(p[:, 2] > 0)
    x, y, z = p[idx, 0], p[idx, 1], p[idx, 2]
    u = intr.fx * (x / z) + intr.cx
    v = intr.fy * (y / z) + intr.cy
    keep = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    return ProjectedPoints(u[keep], v[keep], z[keep], idx[keep])


def rasterize(proj: ProjectedPoints, intr: Intrinsic) -> DepthMap:
    cu = np.floor(proj.u).astype(np.int64)
    cv = np.floor(proj.v).astype(np.int64)
    grid, valid = kernels.rasterize_min(cu, cv, proj.depth, intr.width, intr.height)
    return DepthMap(grid, valid)


def project_to_depth(cloud: PointCloud, ext: Extrinsic, intr: Intrinsic) -> DepthMap:
    """transform_to_camera -> project -> rasterize."""
    return rasterize(project(transform_to_camera(cloud, ext), intr), intr)


def crop_window(intr: Intrinsic, size: int) -> tuple[int, int, int, int]:
    """``(row0, row1, col0, col1)`` of a ``size`` square centered on the principal point.

    Windows that would leave the image are shifted inward.
    """
    if size > intr.width or size > intr.height:
        raise ValidationError(
            f"crop larger than image ({size} vs {intr.width}x{intr.height})"
        )
    if size <= 0:
        raise ValidationError("crop size must be positive")
    half = size // 2
    c0 = int(round(intr.cx)) - half
    r0 = int(round(intr.cy)) - half
    c0 = min(max(c0, 0), intr.width - size)
    r0 = min(max(r0, 0), intr.height - size)
    return r0, r0 + size, c0, c0 + size


def crop_center(img, intr: Intrinsic, size: int = 600):
    """Crop a DepthMap or ImageRGB; see :func:`crop_window`."""
    if (img.width, img.height) != (intr.width, intr.height):
        raise ValidationError(
            f"image {img.width}x{img.height} does not match intrinsics {intr.width}x{intr.height}"
        )
    r0, r1, c0, c1 = crop_window(intr, size)
    if isinstance(img, DepthMap):
        return DepthMap(img.depth[r0:r1, c0:c1], img.valid[r0:r1, c0:c1])
    if isinstance(img, ImageRGB):
        return ImageRGB(img.data[r0:r1, c0:c1])
    raise TypeError(f"cannot crop {type(img).__name__}")


def cropped_intrinsic(intr: Intrinsic, size: int) -> Intrinsic:
    """Intrinsics of the cropped view (principal point shifted by the window origin)."""
    r0, _, c0, _ = crop_window(intr, size)
    return Intrinsic(intr.fx, intr.fy, intr.cx - c0, intr.cy - r0, size, size)
