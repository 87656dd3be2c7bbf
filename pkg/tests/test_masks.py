import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfnet.masks import (
    Mask,
    MaskError,
    StrokeParams,
    augment_mask,
    bucket_index,
    bucket_of,
    flip_horizontal,
    generate_mask,
    load_mask,
    mask_pool,
    read_manifest,
    save_mask,
    write_mask_set,
)


def test_zero_strokes_gives_all_known():
    m = generate_mask(32, 32, StrokeParams(strokes=(0, 0)), seed=1)
    assert np.all(m.grid == 1) and m.area_ratio == 0.0 and m.bucket == 0


def test_seed_42_ratio_recounts_exactly():
    m = generate_mask(256, 256, seed=42)
    assert set(np.unique(m.grid)) <= {0, 1}
    assert m.area_ratio == np.count_nonzero(m.grid == 0) / (256 * 256)
    assert 0 < m.area_ratio < 0.5


def test_generation_deterministic():
    a, b = generate_mask(64, 64, seed=9), generate_mask(64, 64, seed=9)
    assert np.array_equal(a.grid, b.grid)
    assert not np.array_equal(a.grid, generate_mask(64, 64, seed=10).grid)


def test_too_small_rejected():
    with pytest.raises(MaskError):
        generate_mask(8, 32)


def test_unreachable_ratio_raises():
    huge = StrokeParams(strokes=(6, 6), vertices=(12, 12), width=(200.0, 200.0))
    with pytest.raises(MaskError):
        generate_mask(32, 32, huge, seed=0, max_tries=3)


@pytest.mark.parametrize("ratio,bucket", [(0.05, 0), (0.10, 1), (0.2, 2), (0.3, 3), (0.4, 4), (0.499, 4), (0.0, 0)])
def test_bucket_bounds(ratio, bucket):
    assert bucket_index(ratio) == bucket


@pytest.mark.parametrize("ratio", [0.5, 0.73, -0.01])
def test_bucket_out_of_range(ratio):
    with pytest.raises(MaskError):
        bucket_index(ratio)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 4095))
def test_bucket_matches_exact_pixel_count(zeros):
    # integer comparison is the independent route: zeros/4096 in [b/10, (b+1)/10)
    ratio = zeros / 4096
    if ratio >= 0.5:
        return
    b = bucket_index(ratio)
    assert 10 * zeros >= b * 4096 and 10 * zeros < (b + 1) * 4096


def test_augment_identity_draw_exists():
    m = generate_mask(32, 32, seed=3)
    found = False
    for s in range(64):
        if np.array_equal(augment_mask(m, s).grid, m.grid):
            found = True
            break
    assert found


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_augment_preserves_hole_count(mseed, aseed):
    m = generate_mask(32, 32, seed=mseed)
    a = augment_mask(m, aseed)
    assert np.count_nonzero(a.grid == 0) == np.count_nonzero(m.grid == 0)
    assert a.area_ratio == m.area_ratio and a.bucket == bucket_of(a)


def test_augment_covers_dihedral_group():
    grid = np.zeros((16, 16), dtype=np.uint8)
    grid[0, :3] = 1
    grid[1, 0] = 1
    m = Mask.from_grid(grid)
    seen = {augment_mask(m, s).grid.tobytes() for s in range(200)}
    assert len(seen) == 8


def test_double_flip_is_identity():
    m = generate_mask(40, 40, seed=5)
    assert np.array_equal(flip_horizontal(flip_horizontal(m)).grid, m.grid)


def test_png_round_trip_and_convention(tmp_path):
    m = generate_mask(32, 32, seed=6)
    save_mask(m, tmp_path / "m.png")
    from PIL import Image
    raw = np.asarray(Image.open(tmp_path / "m.png"))
    assert np.array_equal(raw == 255, m.grid == 0)
    back = load_mask(tmp_path / "m.png")
    assert np.array_equal(back.grid, m.grid) and back.area_ratio == m.area_ratio


def test_mask_set_manifest(tmp_path):
    masks = mask_pool(5, 32, seed=2)
    write_mask_set(masks, tmp_path)
    entries = read_manifest(tmp_path / "manifest.txt")
    assert len(entries) == 5
    for (name, ratio, bucket), m in zip(entries, masks):
        assert ratio == m.area_ratio and bucket == m.bucket
        assert np.array_equal(load_mask(tmp_path / name).grid, m.grid)


def test_pool_reproducible():
    a, b = mask_pool(4, 32, 7), mask_pool(4, 32, 7)
    assert all(np.array_equal(x.grid, y.grid) for x, y in zip(a, b))


def test_stroke_params_validation():
    with pytest.raises(ValueError):
        StrokeParams(width=(0.0, 3.0))
    with pytest.raises(ValueError):
        StrokeParams(strokes=(3, 1))
