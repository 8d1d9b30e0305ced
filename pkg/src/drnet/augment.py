"""Classical stochastic augmentation: rotation, shift, shear, zoom,
horizontal flip, and brightness, applied to normalized single-channel images.

Parameters are drawn once per image from symmetric uniform ranges; the warp
is a single composed affine map (rotation, then shear, then zoom, then shift,
about the image center) sampled bilinearly with out-of-bounds fill -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .imageproc import NormalizedImage
from .tensor import RngStream


@dataclass
class AugmentConfig:
    rotation_max: float = 20.0     # degrees
    shift_max: float = 0.20        # fraction of width/height
    shear_max: float = 10.0        # degrees
    zoom_max: float = 0.20         # fraction
    hflip: bool = True
    brightness_range: tuple = (0.8, 1.2)

    def __post_init__(self):
        if min(self.rotation_max, self.shift_max, self.shear_max, self.zoom_max) < 0:
            raise ShapeError("augmentation ranges must be non-negative")
        if self.zoom_max >= 1.0:
            raise ShapeError(f"zoom_max must be < 1, got {self.zoom_max}")
        lo, hi = self.brightness_range
        if lo <= 0 or hi < lo:
            raise ShapeError(f"bad brightness range {self.brightness_range}")


@dataclass
class AugmentParams:
    angle: float = 0.0       # degrees
    shear: float = 0.0       # degrees
    zoom: float = 1.0
    shift_y: float = 0.0     # fraction of height
    shift_x: float = 0.0     # fraction of width
    flip: bool = False
    brightness: float = 1.0

    def is_identity_affine(self) -> bool:
        return (self.angle == 0.0 and self.shear == 0.0 and self.zoom == 1.0
                and self.shift_y == 0.0 and self.shift_x == 0.0)


def sample_params(config: AugmentConfig, rng: RngStream) -> AugmentParams:
    """Draw one parameter set; deterministic given the stream."""
    lo, hi = config.brightness_range
    return AugmentParams(
        angle=float(rng.uniform(-config.rotation_max, config.rotation_max)),
        shear=float(rng.uniform(-config.shear_max, config.shear_max)),
        zoom=float(rng.uniform(1.0 - config.zoom_max, 1.0 + config.zoom_max)),
        shift_y=float(rng.uniform(-config.shift_max, config.shift_max)),
        shift_x=float(rng.uniform(-config.shift_max, config.shift_max)),
        flip=bool(config.hflip and rng.random() < 0.5),
        brightness=float(rng.uniform(lo, hi)),
    )


def _forward_matrix(params: AugmentParams) -> np.ndarray:
    """2x2 linear part of the warp in (y, x) coordinates."""
    a = math.radians(params.angle)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    s = math.tan(math.radians(params.shear))
    shear = np.array([[1.0, 0.0], [s, 1.0]])  # shear x as a function of y
    zoom = np.array([[params.zoom, 0.0], [0.0, params.zoom]])
    return rot @ shear @ zoom


def apply_affine(img: NormalizedImage, params: AugmentParams) -> NormalizedImage:
    data = img.data
    if params.flip:
        data = data[:, ::-1]
    if params.is_identity_affine():
        return NormalizedImage(data.copy())

    h, w = data.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ty = params.shift_y * h
    tx = params.shift_x * w
    inv = np.linalg.inv(_forward_matrix(params))

    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    dy = yy - cy - ty
    dx = xx - cx - tx
    sy = inv[0, 0] * dy + inv[0, 1] * dx + cy
    sx = inv[1, 0] * dy + inv[1, 1] * dx + cx

    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    fy = sy - y0
    fx = sx - x0

    def gather(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = np.full(yi.shape, -1.0)
        vals[valid] = data[yi[valid], xi[valid]]
        return vals

    out = (
        gather(y0, x0) * (1 - fy) * (1 - fx)
        + gather(y0, x0 + 1) * (1 - fy) * fx
        + gather(y0 + 1, x0) * fy * (1 - fx)
        + gather(y0 + 1, x0 + 1) * fy * fx
    )
    return NormalizedImage(np.clip(out, -1.0, 1.0).astype(np.float32))


def apply_brightness(img: NormalizedImage, factor: float) -> NormalizedImage:
    """Multiplicative brightness in [0,1] space: black (-1) is a fixed point."""
    if factor <= 0:
        raise ShapeError(f"brightness factor must be > 0, got {factor}")
    scaled = ((img.data + 1.0) * 0.5 * factor) * 2.0 - 1.0
    return NormalizedImage(np.clip(scaled, -1.0, 1.0).astype(np.float32))


def augment_image(img: NormalizedImage, config: AugmentConfig, rng: RngStream) -> NormalizedImage:
    params = sample_params(config, rng)
    out = apply_affine(img, params)
    if params.brightness != 1.0:
        out = apply_brightness(out, params.brightness)
    return out
