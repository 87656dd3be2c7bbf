"""Reconstruction, perceptual, style and total-variation losses.

All losses take NCHW batches and return the batch mean of the per-image
loss as a scalar :class:`Tensor`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import (
    ContractError,
    ShapeError,
    Tensor,
    conv2d,
    downsample_avg_2x,
    leaky_relu,
    matmul,
    no_grad,
    sub,
    tabs,
    tsum,
)


@dataclass
class LossWeights:
    l1: float = 6.0
    perceptual: float = 0.1
    style: float = 240.0
    tv: float = 0.1

    def __post_init__(self):
        for name in ("l1", "perceptual", "style", "tv"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name}={v} must be finite and >= 0")


class FeatureExtractor:
    """Frozen conv / leaky-ReLU / 2x average-pool stack with a tap after each stage.

    Weights are drawn from a seeded generator unless given explicitly; they
    never require gradients.
    """

    def __init__(self, widths: Sequence[int] = (8, 16, 32, 32), seed: int = 1234,
                 weights: list[tuple[np.ndarray, np.ndarray]] | None = None, slope: float = 0.2):
        self.slope = slope
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = []
            cin = 3
            for cout in widths:
                bound = math.sqrt(6.0 / (cin * 9))
                weights.append((rng.uniform(-bound, bound, size=(cout, cin, 3, 3)), np.zeros(cout)))
                cin = cout
        self.weights = [(Tensor(w), Tensor(b)) for w, b in weights]

    @property
    def stages(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.weights[-1][0].shape[0]

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(self.weights):
            out[f"stage.{i}.weight"] = w.data
            out[f"stage.{i}.bias"] = b.data
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "FeatureExtractor":
        n = len([k for k in arrays if k.endswith(".weight")])
        return cls(weights=[(arrays[f"stage.{i}.weight"], arrays[f"stage.{i}.bias"]) for i in range(n)])

    def __call__(self, x: Tensor) -> list[Tensor]:
        h, w = x.shape[-2:]
        need = 2 ** self.stages
        if h < need or w < need or h % need or w % need:
            raise ShapeError(f"feature extractor with {self.stages} stages needs extents divisible by {need}, got {h}x{w}")
        taps = []
        for weight, bias in self.weights:
            x = downsample_avg_2x(leaky_relu(conv2d(x, weight, bias, padding=1), self.slope))
            taps.append(x)
        return taps

    def embed(self, images: np.ndarray) -> np.ndarray:
        """Global-average-pooled last tap, one vector per image."""
        with no_grad():
            taps = self(Tensor(np.asarray(images, dtype=np.float64)))
        return taps[-1].data.mean(axis=(2, 3))


def _check_pair(pred: Tensor, target: Tensor, name: str) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"{name}: prediction {pred.shape} vs target {target.shape}")


def _const(x) -> Tensor:
    return Tensor(x.data if isinstance(x, Tensor) else x)


def recon_loss(pred: Tensor, target) -> Tensor:
    target = _const(target)
    _check_pair(pred, target, "recon_loss")
    return tsum(tabs(sub(target, pred))) * (1.0 / pred.size)


def perceptual_loss(pred: Tensor, target, fx: FeatureExtractor) -> Tensor:
    target = _const(target)
    _check_pair(pred, target, "perceptual_loss")
    with no_grad():
        target_taps = fx(target)
    total = None
    for a, b in zip(target_taps, fx(pred)):
        term = tsum(tabs(sub(a, b)))
        total = term if total is None else total + term
    return total * (1.0 / pred.shape[0])


def gram(features: Tensor) -> Tensor:
    """Channel co-occurrence matrices, normalised by C*H*W.

    Accepts [C,H,W] (returns [C,C]) or [B,C,H,W] (returns [B,C,C]).
    """
    c, h, w = features.shape[-3:]
    flat = features.reshape(features.shape[:-2] + (h * w,))
    axes = tuple(range(flat.ndim - 2)) + (flat.ndim - 1, flat.ndim - 2)
    return matmul(flat, flat.transpose(*axes)) * (1.0 / (c * h * w))


def style_loss(pred: Tensor, target, fx: FeatureExtractor) -> Tensor:
    target = _const(target)
    _check_pair(pred, target, "style_loss")
    with no_grad():
        target_grams = [gram(t) for t in fx(target)]
    total = None
    for g_t, tap in zip(target_grams, fx(pred)):
        term = tsum(tabs(sub(g_t, gram(tap))))
        total = term if total is None else total + term
    return total * (1.0 / pred.shape[0])


def tv_loss(pred: Tensor) -> Tensor:
    """Absolute differences to the top and left neighbour, over C*H*W."""
    n, c, h, w = pred.shape
    scale = 1.0 / (n * c * h * w)
    terms = []
    if h > 1:
        terms.append(tsum(tabs(sub(pred[:, :, 1:, :], pred[:, :, :-1, :]))))
    if w > 1:
        terms.append(tsum(tabs(sub(pred[:, :, :, 1:], pred[:, :, :, :-1]))))
    if not terms:
        return tsum(pred) * 0.0
    total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    return total * scale


def total_loss(outputs: dict[int, Tensor], targets: dict[int, Tensor], P: Sequence[int],
               Q: Sequence[int], weights: LossWeights, fx: FeatureExtractor | None,
               terms: dict[str, float] | None = None) -> Tensor:
    """Structure loss averaged over layers ``P`` plus texture loss averaged over ``Q``.

    ``outputs`` and ``targets`` map layer index k to the prediction and the
    ground truth at that layer's resolution.  If ``terms`` is given it is
    filled with the unweighted per-layer loss values for logging.
    """
    for k in set(P) | set(Q):
        if k not in outputs or k not in targets:
            raise ContractError(f"layer {k} not among available outputs {sorted(outputs)}")
    if not P and not Q:
        raise ContractError("P and Q are both empty")
    if Q and fx is None:
        raise ContractError("texture loss needs a feature extractor")
    total = None
    if P:
        struct = None
        for k in P:
            l1 = recon_loss(outputs[k], targets[k])
            if terms is not None:
                terms[f"l1_{k}"] = l1.item()
            s = l1 * weights.l1
            struct = s if struct is None else struct + s
        total = struct * (1.0 / len(P))
    if Q:
        texture = None
        for k in Q:
            lp = perceptual_loss(outputs[k], targets[k], fx)
            ls = style_loss(outputs[k], targets[k], fx)
            lt = tv_loss(outputs[k])
            if terms is not None:
                terms[f"perceptual_{k}"] = lp.item()
                terms[f"style_{k}"] = ls.item()
                terms[f"tv_{k}"] = lt.item()
            t = lp * weights.perceptual + ls * weights.style + lt * weights.tv
            texture = t if texture is None else texture + t
        texture = texture * (1.0 / len(Q))
        total = texture if total is None else total + texture
    return total
