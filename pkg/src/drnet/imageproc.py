"""Fundus preprocessing chain.

Order: grayscale -> circle-crop -> median subtraction -> gamma correction ->
adaptive histogram equalization -> resize -> normalize to [-1, 1]. Every
stage maps valid 8-bit images to valid 8-bit images and the whole chain is
deterministic (no RNG anywhere here).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, ShapeError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class RasterImage:
    """Decoded 8-bit image, (H,W) grayscale or (H,W,3) RGB, row major."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.uint8:
            raise ShapeError(f"RasterImage needs uint8 samples, got {arr.dtype}")
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ShapeError(f"RasterImage needs (H,W) or (H,W,3) data, got {arr.shape}")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3


@dataclass
class NormalizedImage:
    """Single-channel float32 image with samples in [-1, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeError(f"NormalizedImage needs (H,W) data, got {arr.shape}")
        if arr.size and (arr.min() < -1.0 or arr.max() > 1.0):
            raise ShapeError("NormalizedImage samples must lie in [-1, 1]")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class PreprocessConfig:
    circle_threshold: int = 10
    median_window: int = 31
    median_mode: str = "subtract"  # or "filter"
    gamma: float = 1.2
    clahe_tiles: int = 8
    clahe_clip: float = 2.0
    target_size: int = 224


# ---------------------------------------------------------------------------
# file IO


def load_image(path) -> RasterImage:
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode in ("L", "I;16", "1"):
                img = img.convert("L")
            elif img.mode != "RGB":
                img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return RasterImage(arr)


def save_image(img, path):
    """Write a RasterImage or NormalizedImage as PNG/PGM (by extension)."""
    path = Path(path)
    if isinstance(img, NormalizedImage):
        img = RasterImage(denormalize_u8(img))
    pil = Image.fromarray(img.data)
    try:
        pil.save(path)
    except OSError as exc:
        raise DataError(f"cannot write image {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# stages


def to_grayscale(img: RasterImage) -> RasterImage:
    if img.channels == 1:
        return RasterImage(img.data.copy())
    r, g, b = LUMA_WEIGHTS
    luma = r * img.data[:, :, 0] + g * img.data[:, :, 1] + b * img.data[:, :, 2]
    return RasterImage(np.rint(luma).astype(np.uint8))


def circle_crop(img: RasterImage, threshold: int = 10) -> RasterImage:
    """Crop to the square around the bright foreground and zero everything
    outside the inscribed circle."""
    if img.channels != 1:
        raise ShapeError("circle_crop expects a grayscale image")
    mask = img.data > threshold
    if not mask.any():
        raise DataError("circle_crop: empty foreground mask (image all background)")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1]) + 1
    x0, x1 = int(cols[0]), int(cols[-1]) + 1
    side = max(y1 - y0, x1 - x0)
    cy = (y0 + y1 - 1) / 2.0
    cx = (x0 + x1 - 1) / 2.0
    top = int(round(cy - (side - 1) / 2.0))
    left = int(round(cx - (side - 1) / 2.0))

    out = np.zeros((side, side), dtype=np.uint8)
    sy0, sy1 = max(0, top), min(img.height, top + side)
    sx0, sx1 = max(0, left), min(img.width, left + side)
    out[sy0 - top : sy1 - top, sx0 - left : sx1 - left] = img.data[sy0:sy1, sx0:sx1]

    c = (side - 1) / 2.0
    yy, xx = np.ogrid[:side, :side]
    inside = (yy - c) ** 2 + (xx - c) ** 2 <= (side / 2.0) ** 2
    out[~inside] = 0
    return RasterImage(out)


def _median_filter(data: np.ndarray, window: int) -> np.ndarray:
    """Odd-window median with replicated borders, computed in row chunks so
    the strided view never materializes all at once."""
    half = window // 2
    padded = np.pad(data, half, mode="edge")
    out = np.empty_like(data)
    mid = (window * window) // 2
    chunk = max(1, 4_000_000 // (data.shape[1] * window * window))
    for start in range(0, data.shape[0], chunk):
        stop = min(start + chunk, data.shape[0])
        win = np.lib.stride_tricks.sliding_window_view(
            padded[start : stop + 2 * half], (window, window)
        )
        flat = win.reshape(win.shape[0], win.shape[1], -1)
        out[start:stop] = np.partition(flat, mid, axis=2)[:, :, mid]
    return out


def median_subtract(img: RasterImage, window: int = 31, mode: str = "subtract") -> RasterImage:
    """Background-subtraction mode: img - median + 128, clamped.
    Plain mode: the median-filtered image itself."""
    if img.channels != 1:
        raise ShapeError("median_subtract expects a grayscale image")
    if window < 3 or window % 2 == 0:
        raise ShapeError(f"median window must be odd and >= 3, got {window}")
    med = _median_filter(img.data, window)
    if mode == "filter":
        return RasterImage(med)
    if mode != "subtract":
        raise ShapeError(f"unknown median mode {mode!r}")
    diff = img.data.astype(np.int16) - med.astype(np.int16) + 128
    return RasterImage(np.clip(diff, 0, 255).astype(np.uint8))


def gamma_correct(img: RasterImage, gamma: float = 1.2) -> RasterImage:
    if gamma <= 0:
        raise ShapeError(f"gamma must be > 0, got {gamma}")
    lut = np.rint(255.0 * (np.arange(256) / 255.0) ** gamma).astype(np.uint8)
    return RasterImage(lut[img.data])


def clahe(img: RasterImage, tiles: int = 8, clip_limit: float = 2.0) -> RasterImage:
    """Contrast-limited adaptive histogram equalization.

    Per-tile 256-bin histograms are clipped at clip_limit times the uniform
    bin height, the excess is spread evenly, and the per-tile equalization
    mappings are blended bilinearly between tile centers at each pixel.
    """
    if img.channels != 1:
        raise ShapeError("clahe expects a grayscale image")
    h, w = img.data.shape
    if h < tiles or w < tiles:
        raise DataError(f"image {w}x{h} is smaller than the {tiles}x{tiles} tile grid")

    ys = np.linspace(0, h, tiles + 1).round().astype(int)
    xs = np.linspace(0, w, tiles + 1).round().astype(int)
    luts = np.empty((tiles, tiles, 256), dtype=np.float64)
    centers_y = np.empty(tiles)
    centers_x = np.empty(tiles)
    for ti in range(tiles):
        centers_y[ti] = (ys[ti] + ys[ti + 1] - 1) / 2.0
        for tj in range(tiles):
            tile = img.data[ys[ti] : ys[ti + 1], xs[tj] : xs[tj + 1]]
            n = tile.size
            hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
            clip = max(1.0, clip_limit * n / 256.0)
            excess = np.maximum(hist - clip, 0.0).sum()
            hist = np.minimum(hist, clip) + excess / 256.0
            cdf = hist.cumsum()
            luts[ti, tj] = np.clip(np.rint(cdf * 255.0 / n), 0, 255)
    for tj in range(tiles):
        centers_x[tj] = (xs[tj] + xs[tj + 1] - 1) / 2.0

    def blend_axis(coords, centers):
        idx0 = np.clip(np.searchsorted(centers, coords, side="right") - 1, 0, tiles - 1)
        idx1 = np.clip(idx0 + 1, 0, tiles - 1)
        span = centers[idx1] - centers[idx0]
        frac = np.where(span > 0, (coords - centers[idx0]) / np.where(span > 0, span, 1.0), 0.0)
        return idx0, idx1, np.clip(frac, 0.0, 1.0)

    iy0, iy1, wy = blend_axis(np.arange(h, dtype=np.float64), centers_y)
    ix0, ix1, wx = blend_axis(np.arange(w, dtype=np.float64), centers_x)

    v = img.data
    wy = wy[:, None]
    wx = wx[None, :]
    out = (
        (1 - wy) * (1 - wx) * luts[iy0[:, None], ix0[None, :], v]
        + (1 - wy) * wx * luts[iy0[:, None], ix1[None, :], v]
        + wy * (1 - wx) * luts[iy1[:, None], ix0[None, :], v]
        + wy * wx * luts[iy1[:, None], ix1[None, :], v]
    )
    return RasterImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def _bilinear(arr: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resampling on a 2-D float array."""
    h, w = arr.shape
    sy = np.clip((np.arange(target_h) + 0.5) * h / target_h - 0.5, 0, h - 1)
    sx = np.clip((np.arange(target_w) + 0.5) * w / target_w - 0.5, 0, w - 1)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    top = arr[np.ix_(y0, x0)] * (1 - fx) + arr[np.ix_(y0, x1)] * fx
    bottom = arr[np.ix_(y1, x0)] * (1 - fx) + arr[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def resize(img: RasterImage, size: int | tuple = 224) -> RasterImage:
    th, tw = (size, size) if isinstance(size, int) else size
    if img.height == th and img.width == tw:
        return RasterImage(img.data.copy())
    if img.channels == 1:
        out = _bilinear(img.data.astype(np.float64), th, tw)
        return RasterImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))
    planes = [
        np.clip(np.rint(_bilinear(img.data[:, :, c].astype(np.float64), th, tw)), 0, 255)
        for c in range(3)
    ]
    return RasterImage(np.stack(planes, axis=2).astype(np.uint8))


def resize_normalized(img: NormalizedImage, size: int) -> NormalizedImage:
    if img.height == size and img.width == size:
        return NormalizedImage(img.data.copy())
    out = _bilinear(img.data.astype(np.float64), size, size)
    return NormalizedImage(np.clip(out, -1.0, 1.0).astype(np.float32))


def normalize_pm1(img: RasterImage) -> NormalizedImage:
    if img.channels != 1:
        raise ShapeError("normalize_pm1 expects a grayscale image")
    return NormalizedImage(img.data.astype(np.float32) / 127.5 - 1.0)


def denormalize_u8(img: NormalizedImage) -> np.ndarray:
    return np.clip(np.rint((img.data + 1.0) * 127.5), 0, 255).astype(np.uint8)


def inscribed_circle_mask(size: int) -> np.ndarray:
    """Boolean mask of the circle inscribed in a size x size square."""
    c = (size - 1) / 2.0
    yy, xx = np.ogrid[:size, :size]
    return (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0) ** 2


def preprocess_chain(img: RasterImage, config: PreprocessConfig | None = None) -> NormalizedImage:
    cfg = config or PreprocessConfig()
    gray = to_grayscale(img)
    cropped = circle_crop(gray, cfg.circle_threshold)
    filtered = median_subtract(cropped, cfg.median_window, cfg.median_mode)
    corrected = gamma_correct(filtered, cfg.gamma)
    equalized = clahe(corrected, cfg.clahe_tiles, cfg.clahe_clip)
    resized = resize(equalized, cfg.target_size)
    # enhancement lifts the black background, so the retinal-disc mask is
    # reapplied last; outside the circle the output is exactly -1
    masked = resized.data.copy()
    masked[~inscribed_circle_mask(cfg.target_size)] = 0
    return normalize_pm1(RasterImage(masked))


def histogram_entropy(data: np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin intensity histogram."""
    hist = np.bincount(np.asarray(data, dtype=np.uint8).ravel(), minlength=256)
    p = hist[hist > 0] / hist.sum()
    return float(-(p * np.log2(p)).sum())
