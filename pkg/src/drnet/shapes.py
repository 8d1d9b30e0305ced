"""Synthetic desk-scale datasets.

Five shape classes stand in for the fundus severity grades in fast tests:
disc, ring, square, cross, stripes. Shapes are jittered in position, size,
and intensity over a noisy background so the task is learnable but not
degenerate. A disc/ring-only variant feeds the small GAN experiments.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .classifier import NUM_CLASSES
from .imageproc import NormalizedImage, RasterImage, save_image
from .tensor import RngStream

CLASS_DIR_NAMES = ["0_no_dr", "1_mild", "2_moderate", "3_severe", "4_proliferative"]


def _grid(size):
    return np.mgrid[:size, :size].astype(np.float64)


def _draw_shape(kind: int, size: int, rng: RngStream) -> np.ndarray:
    yy, xx = _grid(size)
    cy = size / 2 + float(rng.uniform(-size * 0.08, size * 0.08))
    cx = size / 2 + float(rng.uniform(-size * 0.08, size * 0.08))
    r = size * float(rng.uniform(0.22, 0.33))
    fg = float(rng.uniform(0.7, 1.0))
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)

    img = np.zeros((size, size))
    if kind == 0:  # disc
        img[dist <= r] = fg
    elif kind == 1:  # ring
        img[(dist <= r) & (dist >= r * 0.55)] = fg
    elif kind == 2:  # square
        half = r * 0.9
        box = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
        img[box] = fg
    elif kind == 3:  # cross
        arm = max(1.0, r * 0.35)
        img[(np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= r)] = fg
        img[(np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= r)] = fg
    elif kind == 4:  # stripes
        period = max(3.0, size * float(rng.uniform(0.15, 0.25)))
        phase = float(rng.uniform(0, period))
        bars = ((yy + phase) % period) < period / 2
        window = dist <= size * 0.45
        img[bars & window] = fg
    else:
        raise ValueError(f"unknown shape kind {kind}")

    noise = rng.normal(0.0, 0.02, size=(size, size))
    return np.clip(img + noise, 0.0, 1.0)


def shape_image(kind: int, size: int, rng: RngStream) -> NormalizedImage:
    return NormalizedImage((_draw_shape(kind, size, rng) * 2.0 - 1.0).astype(np.float32))


def make_shape_dataset(root, total: int = 2500, size: int = 32,
                       fractions=(0.60, 0.15, 0.15, 0.05, 0.05), seed: int = 0) -> list:
    """Write an imbalanced 5-class shape corpus as PGM files under class
    directories; returns the per-class counts."""
    root = Path(root)
    rng = RngStream(seed)
    counts = [int(round(total * f)) for f in fractions]
    counts[0] += total - sum(counts)
    for kind in range(NUM_CLASSES):
        class_dir = root / CLASS_DIR_NAMES[kind]
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(counts[kind]):
            arr = _draw_shape(kind, size, rng.child(kind, i))
            raster = RasterImage(np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8))
            save_image(raster, class_dir / f"img_{i:05d}.pgm")
    return counts


def disc_ring_images(n: int = 1000, size: int = 32, seed: int = 0) -> list:
    """Normalized disc/ring images for the small GAN experiments."""
    rng = RngStream(seed)
    return [shape_image(i % 2, size, rng.child(10_000 + i)) for i in range(n)]
