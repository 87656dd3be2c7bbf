"""Fusion blocks and the U-Net that carries them on its last decoder layers.

Layer indices count from the output: ``k = 1`` is the final, full-resolution
decoder layer and layer ``k`` runs at ``H / 2**(k-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .nn import BatchNorm2d, Conv2d, Module
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat_channels,
    downsample_avg_2x,
    leaky_relu,
    lerp,
    mul,
    no_grad,
    sigmoid,
    upsample_nearest_2x,
)


@dataclass
class DFNetConfig:
    depth: int = 6
    widths: tuple[int, ...] = (32, 64, 128, 128, 128, 128)
    blocks: int = 3
    P: tuple[int, ...] = (1, 2, 3)
    Q: tuple[int, ...] = (1, 2, 3)
    alpha_width: int = 16
    slope: float = 0.2
    blend: str = "fusion"
    lambda_l1: float = 6.0
    lambda_p: float = 0.1
    lambda_s: float = 240.0
    lambda_tv: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.P = tuple(sorted(int(k) for k in self.P))
        self.Q = tuple(sorted(int(k) for k in self.Q))
        if len(self.widths) != self.depth:
            raise ValueError(f"need {self.depth} widths, got {len(self.widths)}")
        if not 1 <= self.blocks <= min(6, self.depth):
            raise ValueError(f"block count {self.blocks} outside [1, {min(6, self.depth)}]")
        for name, ks in (("P", self.P), ("Q", self.Q)):
            if any(not 1 <= k <= self.blocks for k in ks):
                raise ValueError(f"{name}={ks} not a subset of 1..{self.blocks}")
        if self.blend not in ("fusion", "hard"):
            raise ValueError(f"blend must be 'fusion' or 'hard', got {self.blend!r}")

    @classmethod
    def last(cls, p: int, q: int, **kw) -> "DFNetConfig":
        """Config using the ``(p, q)`` shorthand: structure loss on the last p
        layers, texture loss on the last q."""
        kw.setdefault("blocks", max(p, q, 1))
        return cls(P=tuple(range(1, p + 1)), Q=tuple(range(1, q + 1)), **kw)

    def to_items(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ",".join(str(x) for x in v) if isinstance(v, tuple) else repr(v) if isinstance(v, float) else str(v)
        return out

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "DFNetConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name]
            default = f.default
            if isinstance(default, tuple):
                kw[f.name] = tuple(int(x) for x in raw.split(",") if x.strip())
            elif isinstance(default, bool):
                kw[f.name] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kw[f.name] = int(raw)
            elif isinstance(default, float):
                kw[f.name] = float(raw)
            else:
                kw[f.name] = raw
        return cls(**kw)


@dataclass
class LayerOutput:
    k: int
    features: Tensor
    raw: Tensor
    alpha: Tensor
    resized_input: Tensor
    blended: Tensor


def blend(alpha: Tensor, raw: Tensor, image: Tensor) -> Tensor:
    """Convex per-pixel, per-channel mix: ``alpha*raw + (1-alpha)*image``."""
    if not alpha.shape == raw.shape == image.shape:
        raise ShapeError(f"blend: shapes differ {alpha.shape}, {raw.shape}, {image.shape}")
    return lerp(alpha, raw, image)


def hard_composite(image: Tensor, prediction: Tensor, mask) -> Tensor:
    """Known pixels from ``image``, unknown ones from ``prediction``.

    ``mask`` is 1 on known pixels, shaped [B,1,H,W] or [H,W]; it broadcasts
    over channels.
    """
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if m.ndim == 2:
        m = m[None, None]
    if image.shape != prediction.shape or m.shape[-2:] != image.shape[-2:]:
        raise ShapeError(f"hard_composite: shapes {image.shape}, {prediction.shape}, mask {m.shape}")
    return add(mul(image, m), mul(prediction, 1.0 - m))


def resize_input(image: Tensor, k: int) -> Tensor:
    """Average-pool ``image`` down to the resolution of layer ``k``."""
    h, w = image.shape[-2:]
    f = 2 ** (k - 1)
    if h % f or w % f:
        raise ShapeError(f"extent {h}x{w} not divisible by {f} for layer {k}")
    for _ in range(k - 1):
        image = downsample_avg_2x(image)
    return image


def mean_fill(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill unknown pixels with the per-channel mean of the known region."""
    image = np.asarray(image, dtype=np.float64)
    known = np.asarray(mask, dtype=bool)
    out = image.copy()
    for c in range(image.shape[-3]):
        ch = out[..., c, :, :]
        ch[~known] = image[..., c, :, :][known].mean() if known.any() else 0.5
    return out


class FusionBlock(Module):
    """Raw completion map plus channel-wise alpha predictor for one layer."""

    def __init__(self, channels: int, alpha_width: int = 16, slope: float = 0.2,
                 rng: np.random.Generator | None = None, with_alpha: bool = True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.map_conv = Conv2d(channels, 3, 1, rng=rng)
        self.slope = slope
        if not with_alpha:
            return
        self.alpha1 = Conv2d(channels + 3, alpha_width, 1, rng=rng)
        self.alpha_bn1 = BatchNorm2d(alpha_width)
        self.alpha2 = Conv2d(alpha_width, alpha_width, 3, padding=1, rng=rng)
        self.alpha_bn2 = BatchNorm2d(alpha_width)
        self.alpha3 = Conv2d(alpha_width, 3, 1, rng=rng)

    def map_fn(self, features: Tensor) -> Tensor:
        return sigmoid(self.map_conv(features))

    def alpha_fn(self, features: Tensor, image: Tensor) -> Tensor:
        if features.shape[-2:] != image.shape[-2:]:
            raise ShapeError(f"alpha_fn: features {features.shape} vs image {image.shape}")
        x = concat_channels(features, image)
        x = leaky_relu(self.alpha_bn1(self.alpha1(x)), self.slope)
        x = leaky_relu(self.alpha_bn2(self.alpha2(x)), self.slope)
        return sigmoid(self.alpha3(x))

    def __call__(self, features: Tensor, image: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        raw = self.map_fn(features)
        alpha = self.alpha_fn(features, image)
        return raw, alpha, blend(alpha, raw, image)


class ConvBlock(Module):
    def __init__(self, cin: int, cout: int, stride: int, norm: bool, slope: float,
                 rng: np.random.Generator):
        # 4x4/2 halves even extents exactly; 3x3/1 preserves them
        kernel = 4 if stride == 2 else 3
        self.conv = Conv2d(cin, cout, kernel, stride=stride, padding=1, rng=rng)
        self.norm = BatchNorm2d(cout) if norm else None
        self.slope = slope

    def __call__(self, x: Tensor) -> Tensor:
        x = self.conv(x)
        if self.norm is not None:
            x = self.norm(x)
        return leaky_relu(x, self.slope)


class DFNet(Module):
    """U-Net over the masked image and mask plane with fusion blocks on its
    last ``config.blocks`` decoder layers."""

    def __init__(self, config: DFNetConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        w = config.widths
        ins = (4,) + w[:-1]
        self.encoder = [ConvBlock(ins[i], w[i], 2, i > 0, config.slope, rng)
                        for i in range(config.depth)]
        # decoder level i runs at H/2**i; its skip is encoder output i (input for i=0)
        self.decoder = []
        for i in reversed(range(config.depth)):
            below = w[i]
            skip = 4 if i == 0 else w[i - 1]
            out = w[0] if i == 0 else w[i - 1]
            self.decoder.append(ConvBlock(below + skip, out, 1, i > 0, config.slope, rng))
        with_alpha = config.blend == "fusion"
        self.fusion = [FusionBlock(w[0] if k == 1 else w[k - 2], config.alpha_width, config.slope,
                                   rng, with_alpha=with_alpha)
                       for k in range(1, config.blocks + 1)]

    def check_input(self, image: Tensor, mask: np.ndarray) -> None:
        h, w = image.shape[-2:]
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected [B,3,H,W] image, got {image.shape}")
        for e in (h, w):
            if e < 2 ** self.config.depth or e & (e - 1):
                raise ShapeError(f"extent {e} must be a power of two >= {2 ** self.config.depth}")
        if mask.shape[-2:] != (h, w):
            raise ShapeError(f"mask {mask.shape} does not match image {h}x{w}")

    def forward(self, image: Tensor, mask) -> list[LayerOutput]:
        """Run the network; ``image`` is [B,3,H,W], ``mask`` is 1 on known pixels.

        Returns one :class:`LayerOutput` per fusion block, ordered k = 1..m.
        """
        image = image if isinstance(image, Tensor) else Tensor(image)
        m = np.asarray(mask, dtype=np.float64)
        if m.ndim == 2:
            m = np.broadcast_to(m, (image.shape[0], 1) + m.shape)
        elif m.ndim == 3:
            m = m[:, None]
        self.check_input(image, m)
        masked = mul(image, m)
        x = concat_channels(masked, Tensor(m))

        skips = [x]
        h = x
        for block in self.encoder:
            h = block(h)
            skips.append(h)
        skips.pop()

        depth = self.config.depth
        feats: dict[int, Tensor] = {}
        for j, block in enumerate(self.decoder):
            level = depth - 1 - j
            h = block(concat_channels(upsample_nearest_2x(h), skips[level]))
            if level < self.config.blocks:
                feats[level + 1] = h

        outputs = []
        mask_t = Tensor(m)
        for k in range(1, self.config.blocks + 1):
            fk = feats[k]
            ik = resize_input(masked, k)
            block = self.fusion[k - 1]
            if self.config.blend == "fusion":
                raw, alpha, out = block(fk, ik)
            else:
                raw = block.map_fn(fk)
                known = resize_input(mask_t, k).data
                alpha = Tensor(np.broadcast_to(1.0 - known, raw.shape).copy())
                out = hard_composite(ik, raw, known)
            outputs.append(LayerOutput(k, fk, raw, alpha, ik, out))
        return outputs

    __call__ = forward

    def infer(self, image, mask) -> np.ndarray:
        """Eval-mode forward returning only the full-resolution completion."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                return self.forward(image, mask)[0].blended.data
        finally:
            self.train(was_training)
