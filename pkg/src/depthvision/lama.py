"""Luminance-aware blending of real RGB and synthesized RGB."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import GrayImage, ImageRGB, ValidationError

REC709 = (0.2126, 0.7152, 0.0722)
DEFAULT_L_LOW = 0.15
DEFAULT_L_HIGH = 0.35


class FusionMode(str, enum.Enum):
    FULL = "full"
    PIXELWISE = "pixelwise"
    OFF = "off"


@dataclass(frozen=True)
class LamaConfig:
    l_low: float = DEFAULT_L_LOW
    l_high: float = DEFAULT_L_HIGH
    mode: FusionMode = FusionMode.FULL
    daytime_bypass: bool = False

    def __post_init__(self):
        if not (0.0 <= self.l_low < self.l_high <= 1.0):
            raise ValidationError(
                f"need 0 <= l_low < l_high <= 1, got l_low={self.l_low}, l_high={self.l_high}"
            )
        object.__setattr__(self, "mode", FusionMode(self.mode))


@dataclass(frozen=True)
class FusionResult:
    fused: ImageRGB
    alpha_mean: float
    alpha_min: float
    alpha_max: float
    mode: FusionMode
    bypassed: bool = False


def to_gray(img: ImageRGB) -> GrayImage:
    r, g, b = REC709
    d = img.data
    return GrayImage(np.minimum(r * d[:, :, 0] + g * d[:, :, 1] + b * d[:, :, 2], 1.0))


def mean_luminance(gray: GrayImage) -> float:
    if gray.luminance.size == 0:
        raise ValidationError("mean luminance of an empty image")
    return float(gray.luminance.mean())


def alpha_global(l_mean: float, cfg: LamaConfig) -> float:
    if l_mean <= cfg.l_low:
        return 0.0
    if l_mean >= cfg.l_high:
        return 1.0
    return (l_mean - cfg.l_low) / (cfg.l_high - cfg.l_low)


def alpha_map(gray: GrayImage, cfg: LamaConfig) -> np.ndarray:
    return np.clip((gray.luminance - cfg.l_low) / (cfg.l_high - cfg.l_low), 0.0, 1.0)


def _check_dims(rgb: ImageRGB, gan: ImageRGB) -> None:
    if rgb.data.shape != gan.data.shape:
        raise ValidationError(
            f"dimension mismatch: rgb {rgb.width}x{rgb.height} vs gan {gan.width}x{gan.height}"
        )


def _blend(alpha, rgb: np.ndarray, gan: np.ndarray) -> np.ndarray:
    # keep the endpoints bit-exact and the result inside [0, 1]
    return np.clip(alpha * rgb + (1.0 - alpha) * gan, 0.0, 1.0)


def fuse_full(rgb: ImageRGB, gan: ImageRGB, cfg: LamaConfig = LamaConfig()) -> FusionResult:
    _check_dims(rgb, gan)
    a = alpha_global(mean_luminance(to_gray(rgb)), cfg)
    if a == 1.0 and cfg.daytime_bypass:
        return FusionResult(rgb, 1.0, 1.0, 1.0, FusionMode.FULL, bypassed=True)
    if a == 0.0:
        fused = gan
    elif a == 1.0:
        fused = rgb
    else:
        fused = ImageRGB(_blend(a, rgb.data, gan.data))
    return FusionResult(fused, a, a, a, FusionMode.FULL)


def fuse_pixelwise(rgb: ImageRGB, gan: ImageRGB, cfg: LamaConfig = LamaConfig()) -> FusionResult:
    _check_dims(rgb, gan)
    a = alpha_map(to_gray(rgb), cfg)
    fused = _blend(a[:, :, None], rgb.data, gan.data)
    return FusionResult(
        ImageRGB(fused), float(a.mean()), float(a.min()), float(a.max()), FusionMode.PIXELWISE
    )


def fuse(rgb: ImageRGB, gan: ImageRGB | None, cfg: LamaConfig = LamaConfig()) -> FusionResult:
    """Dispatch on ``cfg.mode``; ``off`` returns the camera image untouched."""
    mode = FusionMode(cfg.mode)
    if mode is FusionMode.OFF:
        return FusionResult(rgb, 1.0, 1.0, 1.0, FusionMode.OFF, bypassed=True)
    if gan is None:
        raise ValidationError(f"fusion mode {mode.value} needs a synthesized image")
    if mode is FusionMode.FULL:
        return fuse_full(rgb, gan, cfg)
    return fuse_pixelwise(rgb, gan, cfg)


def needs_synthesis(rgb: ImageRGB, cfg: LamaConfig) -> bool:
    """False when the configured fusion would return the camera image regardless of the GAN image."""
    mode = FusionMode(cfg.mode)
    if mode is FusionMode.OFF:
        return False
    if mode is FusionMode.FULL and cfg.daytime_bypass:
        return alpha_global(mean_luminance(to_gray(rgb)), cfg) < 1.0
    return True
