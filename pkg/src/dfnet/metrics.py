"""Evaluation metrics: whole-image l1, Boundary Pixels Error and the Frechet
feature distance, aggregated per hole-size bucket."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .masks import N_BUCKETS, Mask, bucket_of
from .tensor import ContractError, ShapeError

RIDGE = 1e-6


class EmptyBandError(ValueError):
    pass


def _grid(mask) -> np.ndarray:
    g = mask.grid if isinstance(mask, Mask) else np.asarray(mask)
    return g.astype(bool)


def l1_metric(pred: np.ndarray, target: np.ndarray, mask=None, region: str = "image") -> float:
    """Mean absolute error over pixels and channels, times 100.

    ``region="hole"`` restricts the mean to unknown pixels of ``mask``.
    """
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_metric: {pred.shape} vs {target.shape}")
    diff = np.abs(target - pred)
    if region == "image":
        return float(diff.mean() * 100.0)
    if region != "hole":
        raise ValueError(f"region must be 'image' or 'hole', got {region!r}")
    hole = ~_grid(mask)
    if not hole.any():
        raise EmptyBandError("mask has no unknown pixels")
    return float(diff[..., hole].mean() * 100.0)


def boundary_band(mask, n: int) -> np.ndarray:
    """Unknown pixels within Chebyshev distance ``n`` of a known pixel."""
    if n < 1:
        raise ValueError(f"band width must be >= 1, got {n}")
    known = _grid(mask)
    if known.all() or not known.any():
        raise EmptyBandError("band needs both known and unknown pixels")
    near = ndimage.maximum_filter(known.astype(np.uint8), size=2 * n + 1, mode="constant", cval=0)
    return near.astype(bool) & ~known


def bpe(pred: np.ndarray, target: np.ndarray, mask, n: int) -> float:
    """Mean absolute error on the boundary band, averaged over channels, times 100."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"bpe: {pred.shape} vs {target.shape}")
    band = boundary_band(mask, n)
    if band.shape != pred.shape[-2:]:
        raise ShapeError(f"bpe: mask {band.shape} vs image {pred.shape}")
    err = np.abs(target - pred)[..., band]
    return float(err.sum() / (band.sum() * pred.shape[-3]) * 100.0)


def matrix_sqrt_psd(s: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Symmetric square root of a symmetric positive semidefinite matrix."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ContractError(f"matrix_sqrt_psd needs a square matrix, got {s.shape}")
    scale = max(np.abs(s).max(), 1.0)
    if np.abs(s - s.T).max() > tol * scale:
        raise ContractError("matrix_sqrt_psd needs a symmetric matrix")
    vals, vecs = np.linalg.eigh((s + s.T) / 2.0)
    if vals.min() < -1e-10 * scale:
        raise ContractError(f"matrix has negative eigenvalue {vals.min()}")
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return (root + root.T) / 2.0


def _gaussian_fit(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ContractError("empty feature set")
    mu = x.mean(axis=0)
    d = x.shape[1]
    cov = np.cov(x, rowvar=False).reshape(d, d) if x.shape[0] > 1 else np.zeros((d, d))
    if x.shape[0] < d + 1:
        cov = cov + RIDGE * np.eye(d)
    return mu, cov


def frechet_feature_distance(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets
    (rows are samples): |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))."""
    mu_a, cov_a = _gaussian_fit(features_a)
    mu_b, cov_b = _gaussian_fit(features_b)
    if mu_a.shape != mu_b.shape:
        raise ShapeError(f"feature dims differ: {mu_a.shape} vs {mu_b.shape}")
    # Tr (S_a S_b)^(1/2) equals Tr (R S_b R)^(1/2) with R = S_a^(1/2), which is symmetric PSD
    root_a = matrix_sqrt_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    cross = np.trace(matrix_sqrt_psd((inner + inner.T) / 2.0))
    diff = mu_a - mu_b
    return float(max(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross, 0.0))


@dataclass
class BucketStats:
    bucket: int | str
    count: int
    l1: float
    bpe: float
    ffd: float


@dataclass
class MetricsReport:
    buckets: dict[int, BucketStats]
    overall: BucketStats
    band: int
    per_sample: list[dict] = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        rows = [asdict(self.buckets[b]) for b in sorted(self.buckets)]
        return json.dumps({"band": self.band, "buckets": rows, "overall": asdict(self.overall)},
                          indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        head = f"{'bucket':<10}{'count':>7}{'l1':>10}{'bpe':>10}{'ffd':>12}"
        lines = [head, "-" * len(head)]
        for row in [self.buckets[b] for b in sorted(self.buckets)] + [self.overall]:
            label = f"[{row.bucket * 10}%,{row.bucket * 10 + 10}%)" if isinstance(row.bucket, int) else row.bucket
            lines.append(f"{label:<10}{row.count:>7}{row.l1:>10.4f}{row.bpe:>10.4f}{row.ffd:>12.6f}")
        return "\n".join(lines) + "\n"


def evaluate_set(predictions: Sequence[np.ndarray], targets: Sequence[np.ndarray],
                 masks: Sequence[Mask], n: int,
                 embedder: Callable[[np.ndarray], np.ndarray],
                 region: str = "image") -> MetricsReport:
    """Per-bucket mean l1 and BPE plus the Frechet distance between embedded
    predictions and targets of each bucket.  Empty buckets are absent."""
    if not (len(predictions) == len(targets) == len(masks)):
        raise ContractError("predictions, targets and masks must align")
    if not predictions:
        raise ContractError("empty evaluation set")
    samples = []
    for pred, target, mask in zip(predictions, targets, masks):
        samples.append({
            "bucket": mask.bucket if mask.bucket is not None else bucket_of(mask),
            "l1": l1_metric(pred, target, mask, region),
            "bpe": bpe(pred, target, mask, n),
        })
    emb_pred = np.asarray(embedder(np.stack(predictions)))
    emb_true = np.asarray(embedder(np.stack(targets)))

    def stats(idx: list[int], label) -> BucketStats:
        return BucketStats(
            bucket=label,
            count=len(idx),
            l1=float(np.mean([samples[i]["l1"] for i in idx])),
            bpe=float(np.mean([samples[i]["bpe"] for i in idx])),
            ffd=frechet_feature_distance(emb_pred[idx], emb_true[idx]),
        )

    buckets = {}
    for b in range(N_BUCKETS):
        idx = [i for i, s in enumerate(samples) if s["bucket"] == b]
        if idx:
            buckets[b] = stats(idx, b)
    overall = stats(list(range(len(samples))), "all")
    return MetricsReport(buckets, overall, n, samples)


def default_band(size: int) -> int:
    """Band width of 4 pixels at 256x256, scaled with resolution."""
    return max(1, round(4 * size / 256))
