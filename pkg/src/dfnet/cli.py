"""Command-line entry point: train / infer / eval / genmasks / gradcheck."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .data import DatasetError, list_images, load_image, save_image
from .masks import MaskError, load_mask, mask_pool, read_manifest, write_mask_set
from .metrics import default_band, evaluate_set
from .model import hard_composite
from .tensor import Tensor, no_grad
from .train import RunConfig, build_extractor, predict, read_config_file, train


def _overrides(tokens: list[str]) -> dict[str, str]:
    items = {}
    it = iter(tokens)
    for tok in it:
        if not tok.startswith("--"):
            raise SystemExit(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            try:
                value = next(it)
            except StopIteration:
                raise SystemExit(f"missing value for {tok}") from None
        items[key] = value
    return items


def cmd_train(args, extra: list[str]) -> int:
    items = read_config_file(args.config) if args.config else {}
    items.update(_overrides(extra))
    cfg = RunConfig.from_items(items)
    _, _, tlog = train(cfg)
    print(f"trained {len(tlog.records)} steps, final loss {tlog.records[-1]['loss']:.6f}")
    print(f"checkpoint: {Path(cfg.out) / 'final.bin'}")
    return 0


def _size_of(meta: dict[str, str]) -> int:
    return int(meta.get("size", "64"))


def cmd_infer(args) -> int:
    net, _, meta = load_checkpoint(args.ckpt)
    size = _size_of(meta)
    for p in (args.image, args.mask):
        if not Path(p).is_file():
            raise FileNotFoundError(p)
    image = load_image(args.image, size)
    mask = load_mask(args.mask)
    if mask.shape != (size, size):
        raise MaskError(f"mask is {mask.shape[0]}x{mask.shape[1]}, checkpoint expects {size}x{size}")
    net.eval()
    with no_grad():
        first = net(Tensor(image[None]), mask.grid[None].astype(np.float64))[0]
    completed = first.blended.data[0]
    alpha = first.alpha.data[0]
    composite = hard_composite(Tensor(image[None]), Tensor(completed[None]), mask.grid).data[0]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(completed, out / "completed.png")
    save_image(composite, out / "composite.png")
    save_image(alpha.mean(axis=0), out / "alpha_mean.png")
    for c in range(alpha.shape[0]):
        save_image(alpha[c], out / f"alpha_c{c}.png")
    print(f"wrote completion, alpha maps and composite to {out}")
    return 0


def cmd_eval(args) -> int:
    net, _, meta = load_checkpoint(args.ckpt)
    size = _size_of(meta)
    files = list_images(args.data)
    entries = read_manifest(Path(args.masks) / "manifest.txt")
    if len(entries) != len(files):
        raise MaskError(f"manifest lists {len(entries)} masks for {len(files)} images")
    images = [load_image(f, size) for f in files]
    masks = []
    for name, ratio, bucket in entries:
        m = load_mask(Path(args.masks) / name)
        if m.shape != (size, size):
            raise MaskError(f"{name} is {m.shape}, expected {size}x{size}")
        if abs(m.area_ratio - ratio) > 1e-12 or m.bucket != bucket:
            raise MaskError(f"{name}: manifest says ratio {ratio} bucket {bucket}, "
                            f"file has {m.area_ratio} bucket {m.bucket}")
        masks.append(m)
    band = args.band or default_band(size)
    fx = build_extractor(RunConfig.from_items({k: v for k, v in meta.items()
                                               if k in ("fx_widths", "fx_seed", "fx_weights")}))
    preds = images if args.identity else predict(net, images, masks)
    report = evaluate_set(preds, images, masks, band, fx.embed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_table())
    print(report.to_table(), end="")
    return 0


def cmd_genmasks(args) -> int:
    masks = mask_pool(args.count, args.size, args.seed)
    manifest = write_mask_set(masks, args.out)
    print(f"wrote {len(masks)} masks and {manifest}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.seed, corrupt=args.corrupt)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status}  {r.name:<18} max rel err {r.error:.3e}  (tol {r.tolerance:.0e}, {r.seconds:.1f}s)")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfnet", description="Deep fusion network for image completion")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model; extra --key value pairs override the config file")
    p.add_argument("--config", help="flat key = value config file")

    p = sub.add_parser("infer", help="complete one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True, help="PNG, 255 marks the hole")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="per-bucket l1 / BPE / Frechet report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--masks", required=True, help="directory with manifest.txt")
    p.add_argument("--band", type=int, default=0, help="band width in pixels (default scales with size)")
    p.add_argument("--out", default="eval_report")
    p.add_argument("--identity", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("genmasks", help="write random free-form masks and a manifest")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if extra and args.command != "train":
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    handlers = {
        "infer": cmd_infer,
        "eval": cmd_eval,
        "genmasks": cmd_genmasks,
        "gradcheck": cmd_gradcheck,
    }
    try:
        if args.command == "train":
            return cmd_train(args, extra)
        return handlers[args.command](args)
    except (CheckpointError, DatasetError, MaskError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
