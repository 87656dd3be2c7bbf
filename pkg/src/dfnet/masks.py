"""Free-form brush-stroke masks, area-ratio buckets and dihedral augmentation.

Masks use 1 for known pixels and 0 for unknown (hole) pixels.  On disk they
are single-channel PNGs with 255 marking the hole.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

N_BUCKETS = 5


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class StrokeParams:
    """Stroke statistics, expressed at a 256x256 reference size and scaled
    linearly to the requested mask size."""

    strokes: tuple[int, int] = (1, 6)
    vertices: tuple[int, int] = (4, 12)
    angle: float = 1.0
    length: tuple[float, float] = (10.0, 40.0)
    width: tuple[float, float] = (4.0, 28.0)
    reference: int = 256

    def __post_init__(self):
        lo, hi = self.strokes
        if lo < 0 or hi < lo:
            raise ValueError(f"bad stroke range {self.strokes}")
        for name in ("vertices", "length", "width"):
            lo, hi = getattr(self, name)
            if lo <= 0 or hi < lo:
                raise ValueError(f"bad {name} range {(lo, hi)}")
        if self.angle < 0:
            raise ValueError("angle perturbation must be non-negative")


@dataclass
class Mask:
    grid: np.ndarray
    area_ratio: float
    bucket: int | None

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> "Mask":
        grid = (np.asarray(grid) > 0.5).astype(np.uint8)
        ratio = area_ratio(grid)
        return cls(grid, ratio, bucket_index(ratio) if ratio < 0.5 else None)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape


def area_ratio(grid: np.ndarray) -> float:
    return int(np.count_nonzero(grid == 0)) / grid.size


def bucket_index(ratio: float) -> int:
    if not 0.0 <= ratio < 0.5:
        raise MaskError(f"hole ratio {ratio} outside [0, 0.5)")
    # rounding strips float noise (0.3*10 -> 3.0000000000000004) at the bounds;
    # genuine pixel-count ratios sit far further than 1e-9 from a bound
    return int(np.floor(round(ratio * 10, 9)))


def bucket_of(mask: Mask) -> int:
    return bucket_index(mask.area_ratio)


def _stamp_segment(hole: np.ndarray, p0, p1, radius: float) -> None:
    h, w = hole.shape
    x0, y0 = p0
    x1, y1 = p1
    r = int(np.ceil(radius))
    xa, xb = max(int(min(x0, x1)) - r, 0), min(int(max(x0, x1)) + r + 1, w)
    ya, yb = max(int(min(y0, y1)) - r, 0), min(int(max(y0, y1)) + r + 1, h)
    if xa >= xb or ya >= yb:
        return
    ys, xs = np.mgrid[ya:yb, xa:xb]
    dx, dy = x1 - x0, y1 - y0
    seg2 = dx * dx + dy * dy
    if seg2 == 0:
        t = np.zeros(xs.shape)
    else:
        t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / seg2, 0.0, 1.0)
    dist2 = (xs - (x0 + t * dx)) ** 2 + (ys - (y0 + t * dy)) ** 2
    hole[ya:yb, xa:xb] |= dist2 <= radius * radius


def _draw(h: int, w: int, params: StrokeParams, rng: np.random.Generator) -> np.ndarray:
    scale = min(h, w) / params.reference
    hole = np.zeros((h, w), dtype=bool)
    n_strokes = int(rng.integers(params.strokes[0], params.strokes[1] + 1))
    for _ in range(n_strokes):
        n_vertices = int(rng.integers(params.vertices[0], params.vertices[1] + 1))
        x, y = rng.uniform(0, w), rng.uniform(0, h)
        heading = rng.uniform(0, 2 * np.pi)
        radius = max(rng.uniform(*params.width) * scale, 1.0) / 2.0
        for _ in range(n_vertices):
            heading += rng.uniform(-params.angle, params.angle)
            length = rng.uniform(*params.length) * scale
            nx = float(np.clip(x + length * np.cos(heading), 0, w - 1))
            ny = float(np.clip(y + length * np.sin(heading), 0, h - 1))
            _stamp_segment(hole, (x, y), (nx, ny), radius)
            x, y = nx, ny
    return hole


def generate_mask(h: int, w: int, params: StrokeParams | None = None, seed: int = 0,
                  max_tries: int = 100) -> Mask:
    """Random polyline brush strokes with round caps, redrawn until the hole
    covers less than half the image."""
    if h < 16 or w < 16:
        raise MaskError(f"mask must be at least 16x16, got {h}x{w}")
    params = params or StrokeParams()
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        hole = _draw(h, w, params, rng)
        grid = (~hole).astype(np.uint8)
        ratio = area_ratio(grid)
        if ratio < 0.5:
            return Mask(grid, ratio, bucket_index(ratio))
    raise MaskError(f"no mask with hole ratio < 0.5 after {max_tries} draws (seed {seed})")


def augment_mask(mask: Mask, seed: int) -> Mask:
    """Apply one of the flip/rotation isometries, drawn from ``seed``.

    Square masks draw from all eight dihedral transforms; rectangular ones
    from the four that keep the shape.
    """
    rng = np.random.default_rng(seed)
    grid = mask.grid
    square = grid.shape[0] == grid.shape[1]
    k = int(rng.integers(4)) if square else 2 * int(rng.integers(2))
    grid = np.rot90(grid, k)
    if rng.integers(2):
        grid = grid[:, ::-1]
    return Mask(np.ascontiguousarray(grid), mask.area_ratio, mask.bucket)


def flip_horizontal(mask: Mask) -> Mask:
    return Mask(np.ascontiguousarray(mask.grid[:, ::-1]), mask.area_ratio, mask.bucket)


def mask_pool(count: int, size: int, seed: int, params: StrokeParams | None = None) -> list[Mask]:
    """``count`` masks drawn from seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [generate_mask(size, size, params, int(s)) for s in seeds]


def save_mask(mask: Mask, path: str | Path) -> None:
    Image.fromarray(np.where(mask.grid == 0, 255, 0).astype(np.uint8)).save(path)


def load_mask(path: str | Path, size: int | None = None) -> Mask:
    img = Image.open(path).convert("L")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.Resampling.NEAREST)
    return Mask.from_grid(np.asarray(img) <= 127)


def write_mask_set(masks: list[Mask], out_dir: str | Path) -> Path:
    """Write numbered PNGs and a ``manifest.txt`` of filename, ratio, bucket."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, m in enumerate(masks):
        name = f"mask_{i:05d}.png"
        save_mask(m, out / name)
        lines.append(f"{name} {m.area_ratio!r} {m.bucket}")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(path: str | Path) -> list[tuple[str, float, int]]:
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise MaskError(f"{path}:{lineno}: expected 'filename ratio bucket'")
        entries.append((parts[0], float(parts[1]), int(parts[2])))
    return entries
