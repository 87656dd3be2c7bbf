import json

import pytest

from dfnet.checkpoint import load_checkpoint
from dfnet.cli import main
from dfnet.data import save_image, synth_dataset
from dfnet.masks import mask_pool, save_mask, write_mask_set

TINY = ["--size", "16", "--synth-count", "8", "--batch-size", "4", "--epochs", "2",
        "--depth", "3", "--widths", "4,6,6", "--alpha-width", "4", "--fx-widths", "4,4",
        "--mask-pool", "8"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", *TINY, "--out", str(out)]) == 0
    return out


def test_train_outputs(trained):
    assert (trained / "final.bin").is_file()
    lines = (trained / "train_log.jsonl").read_text().splitlines()
    records = [json.loads(x) for x in lines]
    assert [r["step"] for r in records] == list(range(1, 5))
    assert all(r["lr"] == 2e-3 for r in records)
    net, group, meta = load_checkpoint(trained / "final.bin")
    assert group.step == 4 and meta["size"] == "16"


def test_train_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tiny run\nsize = 16\nsynth_count = 4\nbatch_size = 4\nepochs = 1\n"
                   "depth = 3\nwidths = 4,6,6\nalpha_width = 4\nfx_widths = 4,4\nmask_pool = 4\n")
    assert main(["train", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path / "o")]) == 0
    _, _, meta = load_checkpoint(tmp_path / "o" / "final.bin")
    assert meta["seed"] == "3" and meta["epochs"] == "1"
    assert main(["train", "--config", str(cfg), "--bogus", "1"]) == 2


def test_genmasks(tmp_path, capsys):
    assert main(["genmasks", "--count", "6", "--size", "32", "--seed", "1", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "manifest.txt").read_text().splitlines()
    assert len(lines) == 6 and all(len(x.split()) == 3 for x in lines)


def _infer_inputs(tmp_path, hole=True):
    img = synth_dataset(1, 16, 5)[0]
    save_image(img, tmp_path / "img.png")
    m = mask_pool(1, 16, 3)[0]
    if not hole:
        m.grid[...] = 1
    save_mask(m, tmp_path / "mask.png")
    return tmp_path / "img.png", tmp_path / "mask.png"


def test_infer_outputs_and_determinism(trained, tmp_path):
    img, mask = _infer_inputs(tmp_path)
    for out in ("o1", "o2"):
        assert main(["infer", "--ckpt", str(trained / "final.bin"), "--image", str(img),
                     "--mask", str(mask), "--out", str(tmp_path / out)]) == 0
    names = ["completed.png", "composite.png", "alpha_mean.png", "alpha_c0.png", "alpha_c1.png", "alpha_c2.png"]
    for n in names:
        assert (tmp_path / "o1" / n).read_bytes() == (tmp_path / "o2" / n).read_bytes()


def test_infer_all_known_mask(trained, tmp_path):
    img, mask = _infer_inputs(tmp_path, hole=False)
    assert main(["infer", "--ckpt", str(trained / "final.bin"), "--image", str(img),
                 "--mask", str(mask), "--out", str(tmp_path / "o")]) == 0
    from PIL import Image
    with Image.open(tmp_path / "o" / "completed.png") as im:
        assert im.size == (16, 16)


def test_infer_errors(trained, tmp_path):
    img, _ = _infer_inputs(tmp_path)
    big = mask_pool(1, 32, 0)[0]
    save_mask(big, tmp_path / "big.png")
    ck = str(trained / "final.bin")
    assert main(["infer", "--ckpt", ck, "--image", str(img), "--mask", str(tmp_path / "big.png"), "--out", str(tmp_path)]) == 2
    assert main(["infer", "--ckpt", ck, "--image", str(tmp_path / "nope.png"), "--mask", str(tmp_path / "big.png"), "--out", str(tmp_path)]) == 2


def _eval_set(tmp_path, count=6):
    data = tmp_path / "data"
    data.mkdir()
    for i, img in enumerate(synth_dataset(count, 16, 77)):
        save_image(img, data / f"img_{i:03d}.png")
    masks = mask_pool(count, 16, 5)
    write_mask_set(masks, tmp_path / "masks")
    return data, tmp_path / "masks", masks


def test_eval_identity_report_is_zero(trained, tmp_path):
    data, mdir, masks = _eval_set(tmp_path)
    out = tmp_path / "rep"
    assert main(["eval", "--ckpt", str(trained / "final.bin"), "--data", str(data), "--masks", str(mdir),
                 "--out", str(out), "--identity"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert all(r["l1"] == 0 and r["bpe"] == 0 for r in rep["buckets"])
    counts = {}
    for m in masks:
        counts[m.bucket] = counts.get(m.bucket, 0) + 1
    assert {r["bucket"]: r["count"] for r in rep["buckets"]} == counts
    assert (out / "report.txt").is_file()


def test_eval_model_and_manifest_mismatch(trained, tmp_path):
    data, mdir, _ = _eval_set(tmp_path)
    ck = str(trained / "final.bin")
    assert main(["eval", "--ckpt", ck, "--data", str(data), "--masks", str(mdir), "--out", str(tmp_path / "r")]) == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    assert rep["overall"]["bpe"] > 0
    lines = (mdir / "manifest.txt").read_text().splitlines()
    (mdir / "manifest.txt").write_text("\n".join(lines[:-1]) + "\n")
    assert main(["eval", "--ckpt", ck, "--data", str(data), "--masks", str(mdir)]) == 2


def test_gradcheck_subset_and_fault(capsys):
    from dfnet.gradcheck import run_suite
    ok = run_suite(0, only=["conv2d", "sigmoid", "mul"])
    assert all(r.passed for r in ok)
    bad = run_suite(0, corrupt="sigmoid", only=["conv2d", "sigmoid", "mul"])
    assert [r.name for r in bad if not r.passed] == ["sigmoid"]
    again = run_suite(0, only=["conv2d", "sigmoid", "mul"])
    assert [r.error for r in again] == [r.error for r in ok]


def test_gradcheck_cli_exit_code(monkeypatch, capsys):
    import dfnet.gradcheck as gc
    real = gc.run_suite
    monkeypatch.setattr(gc, "run_suite", lambda seed, corrupt=None: real(seed, corrupt, only=["leaky_relu", "mul"]))
    assert main(["gradcheck"]) == 0
    assert main(["gradcheck", "--corrupt", "mul"]) == 1
    out = capsys.readouterr().out
    assert "FAIL  mul" in out and "FAIL  leaky_relu" not in out


def test_train_bitwise_reproducible_across_output_dirs(tmp_path):
    for name in ("a", "b"):
        assert main(["train", *TINY, "--seed", "4", "--out", str(tmp_path / name)]) == 0
    for f in ("final.bin", "train_log.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
