"""Run configuration, training loop and batched evaluation helpers."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .checkpoint import read_records, save_checkpoint, write_records
from .data import load_images, synth_dataset
from .losses import FeatureExtractor, LossWeights, total_loss
from .masks import Mask, augment_mask, mask_pool
from .metrics import MetricsReport, default_band, evaluate_set
from .model import DFNet, DFNetConfig, mean_fill, resize_input
from .optim import LrSchedule, ParamGroup, adam_step, lr_at
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class RunConfig:
    data: str = ""
    synth_count: int = 200
    synth_seed: int = 0
    size: int = 64
    batch_size: int = 4
    epochs: int = 20
    max_steps: int = 0
    seed: int = 0
    lr_initial: float = 2e-3
    lr_final: float = 2e-6
    lr_decay: float = 0.1
    lr_step: int = 5
    mask_pool: int = 1000
    band: int = 0
    fx_widths: tuple[int, ...] = (8, 16, 32, 32)
    fx_seed: int = 1234
    fx_weights: str = ""
    out: str = "run"
    ckpt_every: int = 0
    model: DFNetConfig = field(default_factory=lambda: DFNetConfig(depth=6))

    def __post_init__(self):
        if self.size < 16 or self.size & (self.size - 1):
            raise ValueError(f"image size {self.size} must be a power of two >= 16")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        self.fx_widths = tuple(int(w) for w in self.fx_widths)

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr_initial, self.lr_final, self.lr_decay, self.lr_step, self.epochs)

    @property
    def weights(self) -> LossWeights:
        m = self.model
        return LossWeights(m.lambda_l1, m.lambda_p, m.lambda_s, m.lambda_tv)

    @property
    def band_width(self) -> int:
        return self.band or default_band(self.size)

    def to_items(self) -> dict[str, str]:
        """Every run setting except the output location, as text."""
        items = {}
        for f in fields(self):
            if f.name in ("model", "out"):
                continue
            v = getattr(self, f.name)
            items[f.name] = ",".join(map(str, v)) if isinstance(v, tuple) else repr(v) if isinstance(v, float) else str(v)
        items.update({k: v for k, v in self.model.to_items().items() if k != "seed"})
        return items

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "RunConfig":
        own = {f.name: f for f in fields(cls) if f.name != "model"}
        model_keys = {f.name for f in fields(DFNetConfig)}
        unknown = set(items) - set(own) - model_keys
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw = {}
        for name, f in own.items():
            if name in items:
                kw[name] = _parse(items[name], f.default)
        model_items = {k: v for k, v in items.items() if k in model_keys}
        model_items["seed"] = str(kw.get("seed", 0))
        model_items.setdefault("depth", "6")
        return cls(model=DFNetConfig.from_items(model_items), **kw)


def _parse(raw: str, default):
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    items = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        items[key] = value
    return items


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def append(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise TrainingError("log steps must increase")
        self.records.append(record)

    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.records])

    def smoothed(self, window: int = 20) -> np.ndarray:
        x = self.losses()
        window = max(1, min(window, len(x)))
        return np.convolve(x, np.ones(window) / window, mode="valid")

    def lr_by_epoch(self) -> dict[int, float]:
        out = {}
        for r in self.records:
            out.setdefault(r["epoch"], r["lr"])
        return out

    def write(self, path: str | Path) -> None:
        Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records))


def build_extractor(cfg: RunConfig) -> FeatureExtractor:
    if cfg.fx_weights:
        _, records = read_records(cfg.fx_weights)
        return FeatureExtractor.from_arrays(records)
    return FeatureExtractor(cfg.fx_widths, seed=cfg.fx_seed)


def save_extractor(fx: FeatureExtractor, path: str | Path) -> None:
    write_records(path, {"kind": "feature_extractor", "stages": str(fx.stages)}, fx.named_arrays())


def load_dataset(cfg: RunConfig) -> list[np.ndarray]:
    if cfg.data:
        return load_images(cfg.data, cfg.size)
    return synth_dataset(cfg.synth_count, cfg.size, cfg.synth_seed)


def masks_to_batch(masks: list[Mask]) -> np.ndarray:
    return np.stack([m.grid.astype(np.float64) for m in masks])


def train(cfg: RunConfig, images: list[np.ndarray] | None = None, write: bool = True,
          net: DFNet | None = None) -> tuple[DFNet, ParamGroup, TrainLog]:
    """Train a DFNet; returns the network, its optimizer state and the log.

    When ``write`` is set, checkpoints and the log go to ``cfg.out``.
    """
    images = load_dataset(cfg) if images is None else images
    if not images:
        raise TrainingError("dataset is empty")
    data = np.stack(images)
    if data.shape[1:] != (3, cfg.size, cfg.size):
        raise TrainingError(f"images have shape {data.shape[1:]}, expected (3, {cfg.size}, {cfg.size})")
    net = net if net is not None else DFNet(cfg.model)
    net.train()
    group = ParamGroup(net.named_parameters())
    fx = build_extractor(cfg)
    weights = cfg.weights
    schedule = cfg.schedule
    rng = np.random.default_rng(cfg.seed)
    pool = mask_pool(cfg.mask_pool, cfg.size, int(rng.integers(1 << 31)))
    batch = min(cfg.batch_size, len(data))
    steps_per_epoch = len(data) // batch
    out_dir = Path(cfg.out)
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
    tlog = TrainLog()
    step = 0
    ks = sorted(set(cfg.model.P) | set(cfg.model.Q))

    for epoch in range(cfg.epochs):
        lr = lr_at(schedule, epoch)
        order = rng.permutation(len(data))
        for b in range(steps_per_epoch):
            if cfg.max_steps and step >= cfg.max_steps:
                break
            idx = order[b * batch:(b + 1) * batch]
            picks = rng.integers(len(pool), size=len(idx))
            aug_seeds = rng.integers(1 << 31, size=len(idx))
            masks = [augment_mask(pool[int(p)], int(s)) for p, s in zip(picks, aug_seeds)]
            image = Tensor(data[idx])
            outputs = net(image, masks_to_batch(masks))
            preds = {o.k: o.blended for o in outputs}
            targets = {k: resize_input(image, k) for k in ks}
            terms: dict[str, float] = {}
            loss = total_loss(preds, targets, cfg.model.P, cfg.model.Q, weights, fx, terms)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, step {step}")
            loss.backward()
            adam_step(group, lr)
            group.zero_grad()
            step += 1
            tlog.append({"epoch": epoch, "step": step, "lr": lr, "loss": value, **terms})
            if step % 50 == 0:
                log.info("epoch %d step %d lr %.1e loss %.5f", epoch, step, lr, value)
            if write and cfg.ckpt_every and step % cfg.ckpt_every == 0:
                save_checkpoint(out_dir / f"ckpt_{step:06d}.bin", net, group, cfg.to_items())
        if cfg.max_steps and step >= cfg.max_steps:
            break

    if write:
        save_checkpoint(out_dir / "final.bin", net, group, cfg.to_items())
        tlog.write(out_dir / "train_log.jsonl")
    return net, group, tlog


def predict(net: DFNet, images: list[np.ndarray], masks: list[Mask], batch: int = 8) -> list[np.ndarray]:
    """Eval-mode full-resolution completions, one per image."""
    out = []
    for i in range(0, len(images), batch):
        x = np.stack(images[i:i + batch])
        m = masks_to_batch(masks[i:i + batch])
        out.extend(net.infer(x, m))
    return out


def mean_fill_predictions(images: list[np.ndarray], masks: list[Mask]) -> list[np.ndarray]:
    return [mean_fill(img, m.grid) for img, m in zip(images, masks)]


def evaluate(predictions: list[np.ndarray], images: list[np.ndarray], masks: list[Mask],
             band: int, fx: FeatureExtractor) -> MetricsReport:
    return evaluate_set(predictions, images, masks, band, fx.embed)
