"""Image ingestion and the procedural desk-scale dataset."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

IMAGE_SUFFIXES = (".png",)


class DatasetError(ValueError):
    pass


def load_image(path: str | Path, size: int) -> np.ndarray:
    """Decode one image to a [3,size,size] float64 array in [0,1]."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if img.size != (size, size):
                img = img.resize((size, size), Image.Resampling.BILINEAR)
            arr = np.asarray(img, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def list_images(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory} is not a directory")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DatasetError(f"no PNG images in {directory}")
    return files


def load_images(directory: str | Path, size: int) -> list[np.ndarray]:
    """All PNGs of ``directory`` in lexicographic order, resized to size x size."""
    return [load_image(p, size) for p in list_images(directory)]


def save_image(array: np.ndarray, path: str | Path) -> None:
    """Write a [3,H,W] or [H,W] array in [0,1] as an 8-bit PNG."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    Image.fromarray(np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)).save(path)


def _synth_one(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    # linear colour gradient background
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    theta = rng.uniform(0, 2 * np.pi)
    t = np.clip(0.5 + (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)), 0, 1)
    img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t

    for _ in range(int(rng.integers(2, 5))):
        colour = rng.uniform(0, 1, 3)[:, None, None]
        cx, cy = rng.uniform(0.1, 0.9, 2)
        rx, ry = rng.uniform(0.08, 0.3, 2)
        if rng.random() < 0.5:
            region = (np.abs(xx - cx) <= rx) & (np.abs(yy - cy) <= ry)
        else:
            region = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        if rng.random() < 0.5:
            # striped fill gives the texture losses something to match
            period = rng.uniform(0.04, 0.15)
            phi = rng.uniform(0, np.pi)
            stripes = 0.5 + 0.5 * np.sign(np.sin(2 * np.pi * (np.cos(phi) * xx + np.sin(phi) * yy) / period))
            fill = colour * (0.6 + 0.4 * stripes)
        else:
            fill = np.broadcast_to(colour, img.shape)
        img = np.where(region, fill, img)
    return np.clip(img, 0.0, 1.0)


def synth_dataset(count: int, size: int, seed: int) -> list[np.ndarray]:
    """Procedural images: colour gradients overlaid with flat or striped
    rectangles and ellipses.  Fully determined by ``seed``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    return [_synth_one(size, rng) for _ in range(count)]
