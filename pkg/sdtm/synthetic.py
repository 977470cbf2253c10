"""
Procedural stand-in corpus: one coloured shape per category on a dark background.
"""
import colorsys
import logging
from pathlib import Path
from typing import Union

import numpy as np

from sdtm import codec
from sdtm.data import DatasetIndex, load_dataset_dir
from sdtm.errors import IoError
from sdtm.schemas import SyntheticSpec

logger = logging.getLogger(__name__)

SHAPES = ("circle", "square", "triangle", "cross")
BACKGROUND = (0.08, 0.08, 0.1)
RADIUS_FRACTION = 0.3


def shape_mask(shape: str, size: int, center: np.ndarray, radius: float) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) + 0.5
    dy = coords[:, None] - center[0]
    dx = coords[None, :] - center[1]
    if shape == "circle":
        return dx * dx + dy * dy <= radius * radius
    if shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.85 * radius
    if shape == "triangle":
        # apex up, base at 0.7r below the centre
        return (dy <= 0.7 * radius) & (np.abs(dx) <= 0.6 * (dy + radius))
    if shape == "cross":
        arm = 0.3 * radius
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= radius)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= radius))
    raise ValueError(f"unknown shape {shape!r}")


def render(shape: str, size: int, hue: float, offset: np.ndarray, scale: float) -> np.ndarray:
    """uint8 RGB image [3, size, size]."""
    center = np.array([size / 2.0, size / 2.0]) + offset
    mask = shape_mask(shape, size, center, RADIUS_FRACTION * size * scale)
    colour = colorsys.hsv_to_rgb(hue % 1.0, 0.8, 0.9)
    image = np.empty((3, size, size), dtype=np.float64)
    for c in range(3):
        image[c] = np.where(mask, colour[c], BACKGROUND[c])
    return np.floor(image * 255.0 + 0.5).astype(np.uint8)


def category_dir_name(category: int) -> str:
    return f"c{category:02d}_{SHAPES[category % len(SHAPES)]}"


def synth_generate(spec: SyntheticSpec, out: Union[str, Path]) -> DatasetIndex:
    """Write the corpus under ``out`` and index it; identical (spec, seed) gives identical bytes."""
    out = Path(out)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.scale_range
    try:
        for category in range(spec.n_categories):
            directory = out / category_dir_name(category)
            directory.mkdir(parents=True, exist_ok=True)
            shape = SHAPES[category % len(SHAPES)]
            base_hue = category / spec.n_categories
            for i in range(spec.images_per_category):
                hue = base_hue + rng.uniform(-spec.hue_jitter, spec.hue_jitter)
                offset = rng.normal(0.0, spec.position_sigma, size=2)
                scale = rng.uniform(lo, hi)
                pixels = render(shape, spec.image_size, hue, offset, scale)
                (directory / f"{i:04d}.ppm").write_bytes(codec.encode_pnm(pixels))
    except OSError as e:
        raise IoError(f"cannot write synthetic corpus to {out}: {e}")
    logger.info(
        "generated %d categories x %d images (%dx%d) in %s",
        spec.n_categories, spec.images_per_category, spec.image_size, spec.image_size, out,
    )
    return load_dataset_dir(out, k=1, seen_fraction=spec.seen_fraction, seed=spec.seed)
