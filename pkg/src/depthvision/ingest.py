"""Readers/writers for point-cloud sweeps, calibration and odometry poses."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PointCloud, ValidationError
from .geometry import Extrinsic, Intrinsic

log = logging.getLogger(__name__)

CALIB_KEYS = ("rotation", "translation", "fx", "fy", "cx", "cy", "width", "height")
CALIB_ROTATION_TOL = 1e-6
MAX_SWEEPS = 3


class CloudFormatError(ValueError):
    pass


def read_cloud_bin_counted(path, stride: int = 4) -> tuple[PointCloud, int]:
    """Decode little-endian float32 records; returns the cloud and the number of skipped records."""
    if stride not in (3, 4, 5):
        raise ValueError(f"stride must be 3, 4 or 5 floats per point, got {stride}")
    raw = Path(path).read_bytes()
    if len(raw) % (4 * stride):
        raise CloudFormatError(
            f"{path}: {len(raw)} bytes is not a multiple of {4 * stride} (stride {stride})"
        )
    rec = np.frombuffer(raw, dtype="<f4").reshape(-1, stride).astype(np.float64)
    ok = np.all(np.isfinite(rec[:, :3]), axis=1)
    skipped = int((~ok).sum())
    if skipped:
        log.warning("%s: skipped %d records with non-finite coordinates", path, skipped)
    rec = rec[ok]
    intensity = rec[:, 3] if stride >= 4 else None
    return PointCloud(rec[:, :3], intensity), skipped


def read_cloud_bin(path, stride: int = 4) -> PointCloud:
    return read_cloud_bin_counted(path, stride)[0]


def write_cloud_bin(path, cloud: PointCloud, stride: int = 4) -> None:
    if stride not in (3, 4, 5):
        raise ValueError(f"stride must be 3, 4 or 5, got {stride}")
    rec = np.zeros((len(cloud), stride), dtype="<f4")
    rec[:, :3] = cloud.points
    if stride >= 4 and cloud.intensity is not None:
        rec[:, 3] = cloud.intensity
    Path(path).write_bytes(rec.tobytes())


def calibration_to_dict(ext: Extrinsic, intr: Intrinsic) -> dict:
    return {
        "rotation": [float(v) for v in ext.rotation.reshape(-1)],
        "translation": [float(v) for v in ext.translation],
        "fx": float(intr.fx),
        "fy": float(intr.fy),
        "cx": float(intr.cx),
        "cy": float(intr.cy),
        "width": int(intr.width),
        "height": int(intr.height),
    }


def calibration_from_dict(d: dict) -> tuple[Extrinsic, Intrinsic]:
    for k in CALIB_KEYS:
        if k not in d:
            raise ValidationError(f"calibration: missing key {k!r}")
    rot = np.asarray(d["rotation"], dtype=np.float64)
    trans = np.asarray(d["translation"], dtype=np.float64)
    if rot.size != 9 or trans.size != 3:
        raise ValidationError("calibration: rotation needs 9 values and translation 3")
    ext = Extrinsic(rot.reshape(3, 3), trans, tol=CALIB_ROTATION_TOL)
    intr = Intrinsic(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                     int(d["width"]), int(d["height"]))
    return ext, intr


def write_calibration(path, ext: Extrinsic, intr: Intrinsic) -> None:
    Path(path).write_text(json.dumps(calibration_to_dict(ext, intr), sort_keys=True, indent=1) + "\n")


def read_calibration(path) -> tuple[Extrinsic, Intrinsic]:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON ({e})") from e
    return calibration_from_dict(d)


@dataclass(frozen=True)
class SweepRecord:
    cloud: PointCloud
    pose: Extrinsic  # world-from-sensor
    timestamp_us: int = 0


def read_poses(path) -> list[tuple[int, Extrinsic]]:
    out = []
    for i, entry in enumerate(json.loads(Path(path).read_text())):
        try:
            pose = Extrinsic(np.reshape(entry["rotation"], (3, 3)), entry["translation"],
                             tol=CALIB_ROTATION_TOL)
            out.append((int(entry["timestamp_us"]), pose))
        except KeyError as e:
            raise ValidationError(f"{path}: pose {i} missing key {e}") from e
    return out


def write_poses(path, poses: list[tuple[int, Extrinsic]]) -> None:
    data = [
        {"timestamp_us": int(ts), "rotation": [float(v) for v in p.rotation.reshape(-1)],
         "translation": [float(v) for v in p.translation]}
        for ts, p in poses
    ]
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


def accumulate_sweeps(sweeps: list[SweepRecord], n: int, reference: int | None = None) -> PointCloud:
    """Merge the ``n`` sweeps ending at ``reference`` into the reference sensor frame.

    Motion is compensated per sweep via the odometry poses, not per point.
    """
    if n < 1:
        raise ValueError(f"need at least one sweep, got n={n}")
    if n > MAX_SWEEPS:
        raise ValueError(f"at most {MAX_SWEEPS} sweeps are fused, got n={n}")
    if reference is None:
        reference = len(sweeps) - 1
    if not 0 <= reference < len(sweeps):
        raise IndexError(f"reference sweep {reference} out of range for {len(sweeps)} sweeps")
    first = reference - n + 1
    if first < 0:
        raise ValueError(f"only {reference + 1} sweeps available up to the reference, need {n}")
    ref_pose = sweeps[reference].pose
    ref_inv = ref_pose.inverse()
    clouds = []
    for rec in sweeps[first:reference + 1]:
        if (np.array_equal(rec.pose.rotation, ref_pose.rotation)
                and np.array_equal(rec.pose.translation, ref_pose.translation)):
            # same pose: skip the round trip so points stay bit-identical
            clouds.append(rec.cloud)
            continue
        rel = ref_inv.compose(rec.pose)
        pts = rec.cloud.points @ rel.rotation.T + rel.translation
        clouds.append(PointCloud(pts, rec.cloud.intensity))
    # reference sweep first so its points keep their original order
    clouds.insert(0, clouds.pop())
    return PointCloud.concatenate(clouds)
