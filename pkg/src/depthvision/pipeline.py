"""End-to-end frame processing: LiDAR -> depth -> synthesized RGB -> fusion."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DepthMap, ImageRGB, ImageSigned, PointCloud, from_signed, to_signed
from .densify import DEFAULT_MAX_RANGE, densify_nearest, encode_for_generator
from .geometry import Extrinsic, Intrinsic, crop_center, project_to_depth
from .lama import FusionResult, LamaConfig, fuse, needs_synthesis
from .neural.nets import Nets
from .neural.resize import resize_bilinear


@dataclass(frozen=True)
class FrameSettings:
    crop_size: int = 128
    gen_size: int = 64
    max_range: float = DEFAULT_MAX_RANGE


def sparse_depth(cloud: PointCloud, ext: Extrinsic, intr: Intrinsic, crop_size: int) -> DepthMap:
    return crop_center(project_to_depth(cloud, ext, intr), intr, crop_size)


def dense_to_input(dense: DepthMap, settings: FrameSettings) -> np.ndarray:
    """Encode a dense depth map and resize it to the generator grid; returns ``(1, 1, S, S)``."""
    enc = encode_for_generator(dense, settings.max_range)
    g = settings.gen_size
    x = np.clip(resize_bilinear(enc.data[:, :, 0], g, g), -1.0, 1.0)
    return x[None, None]


def generator_input(sparse: DepthMap, settings: FrameSettings) -> np.ndarray:
    return dense_to_input(densify_nearest(sparse), settings)


def generator_target(rgb: ImageRGB, intr: Intrinsic, settings: FrameSettings) -> np.ndarray:
    """Cropped camera image resized to the generator grid in [-1, 1]; ``(1, 3, S, S)``."""
    c = crop_center(rgb, intr, settings.crop_size)
    g = settings.gen_size
    y = to_signed(ImageRGB(np.clip(resize_bilinear(c.data, g, g), 0.0, 1.0))).data
    return y.transpose(2, 0, 1)[None]


def synthesize_rgb(nets: Nets, gen_in: np.ndarray, settings: FrameSettings) -> ImageRGB:
    """Run generator + refiner, return an ImageRGB at the crop size."""
    out = nets.generate(gen_in).astype(np.float64)[0].transpose(1, 2, 0)
    rgb = from_signed(ImageSigned(np.clip(out, -1.0, 1.0)))
    c = settings.crop_size
    return ImageRGB(np.clip(resize_bilinear(rgb.data, c, c), 0.0, 1.0))


def synthesize_from_cloud(nets: Nets, cloud: PointCloud, ext: Extrinsic, intr: Intrinsic,
                          settings: FrameSettings) -> ImageRGB:
    return synthesize_rgb(nets, generator_input(sparse_depth(cloud, ext, intr, settings.crop_size), settings),
                          settings)


def process_frame(rgb: ImageRGB, cloud: PointCloud, ext: Extrinsic, intr: Intrinsic, nets: Nets | None,
                  lama: LamaConfig, settings: FrameSettings) -> tuple[FusionResult, ImageRGB | None]:
    """Fuse the cropped camera image with the synthesized view.

    Synthesis is skipped when the fusion result cannot depend on it.
    Returns the fusion result and the synthesized image (or None).
    """
    cam = crop_center(rgb, intr, settings.crop_size)
    gan = None
    if needs_synthesis(cam, lama):
        if nets is None:
            raise ValueError(f"fusion mode {lama.mode.value} needs generator weights")
        gan = synthesize_from_cloud(nets, cloud, ext, intr, settings)
    return fuse(cam, gan, lama), gan


def training_pairs(frames, settings: FrameSettings):
    """Stack ``(rgb, cloud, ext, intr)`` frames into generator inputs and targets."""
    xs, ys = [], []
    for rgb, cloud, ext, intr in frames:
        xs.append(generator_input(sparse_depth(cloud, ext, intr, settings.crop_size), settings))
        ys.append(generator_target(rgb, intr, settings))
    return np.concatenate(xs), np.concatenate(ys)


def load_manifest(path) -> tuple[dict, Path]:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    return json.loads(p.read_text()), p.parent


def dataset_frames(manifest_path, split: str | None = "train", lighting: str | None = "day",
                   min_luminance: float | None = None):
    """Yield ``(scene_id, rgb, cloud, ext, intr)`` for scenes of a simulated dataset.

    Night scenes use ``rgb_dark.png``.  ``min_luminance`` drops frames whose
    camera image is darker than the threshold.
    """
    from .core import read_png
    from .ingest import read_calibration, read_cloud_bin
    from .lama import mean_luminance, to_gray

    manifest, root = load_manifest(manifest_path)
    for sc in manifest["scenes"]:
        if split is not None and sc["split"] != split:
            continue
        if lighting is not None and sc["lighting"] != lighting:
            continue
        d = root / sc["dir"]
        rgb = read_png(d / ("rgb_dark.png" if sc["lighting"] == "night" else "rgb.png"))
        if min_luminance is not None and mean_luminance(to_gray(rgb)) < min_luminance:
            continue
        ext, intr = read_calibration(d / "calib.json")
        yield sc["id"], rgb, read_cloud_bin(d / "cloud.bin", 4), ext, intr
