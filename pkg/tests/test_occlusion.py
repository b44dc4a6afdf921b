import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpslab.errors import DataError
from mpslab.occlusion import (
    Partition,
    Region,
    SubsetMutant,
    composite,
    draw_split_point,
    enumerate_subsets,
    full_region,
    load_mask_png,
    mutant_mask,
    save_mask_png,
    split_region,
    subset_masks,
)

from conftest import rand_image


def shapes(p: Partition):
    return [(r.height, r.width) for r in p.parts]


def test_split_symmetric_quadrants():
    assert shapes(split_region(full_region(4, 4), (2, 2))) == [(2, 2)] * 4


def test_split_asymmetric():
    assert shapes(split_region(full_region(8, 8), (3, 5))) == [(3, 5), (3, 3), (5, 5), (5, 3)]


def test_split_offset_region_uses_absolute_coordinates():
    p = split_region(Region(2, 3, 4, 4), (4, 5))
    assert p.parts[0] == Region(2, 3, 2, 2)
    assert p.parts[3] == Region(4, 5, 2, 2)


@pytest.mark.parametrize("region,point", [(Region(0, 0, 1, 8), (0, 4)), (Region(0, 0, 4, 4), (0, 2)), (Region(0, 0, 4, 4), (2, 4))])
def test_split_errors(region, point):
    with pytest.raises(DataError):
        split_region(region, point)


def test_draw_on_2x2_has_one_choice():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert draw_split_point(Region(5, 7, 2, 2), rng) == (6, 8)


def test_draw_deterministic_for_seed():
    a = [draw_split_point(full_region(8, 8), np.random.default_rng(42)) for _ in range(3)]
    assert len(set(a)) == 1


def test_draw_too_small():
    with pytest.raises(DataError):
        draw_split_point(Region(0, 0, 1, 5), np.random.default_rng(0))


def test_draw_uniform_over_interior():
    rng = np.random.default_rng(2024)
    n = 10_000
    counts = {}
    for _ in range(n):
        pt = draw_split_point(full_region(4, 4), rng)
        counts[pt] = counts.get(pt, 0) + 1
    assert set(counts) == {(r, c) for r in (1, 2, 3) for c in (1, 2, 3)}
    p = 1 / 9
    sigma = (n * p * (1 - p)) ** 0.5
    for k in counts.values():
        assert abs(k - n * p) <= 3 * sigma


def test_composite_identity_and_total_occlusion():
    img = rand_image(1, 4, 4)
    np.testing.assert_array_equal(composite(img, np.ones((4, 4), bool)), img)
    out = composite(img, np.zeros((4, 4), bool), [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(out, np.broadcast_to([0.1, 0.2, 0.3], img.shape))


def test_composite_against_pixel_loop():
    img = rand_image(2, 4, 4)
    before = img.copy()
    mask = np.zeros((4, 4), bool)
    mask[0:2, 0:2] = True
    out = composite(img, mask, 0.0)
    expected = np.empty_like(img)
    for r in range(4):
        for c in range(4):
            for k in range(3):
                expected[r, c, k] = img[r, c, k] if (r < 2 and c < 2) else 0.0
    np.testing.assert_array_equal(out, expected)
    np.testing.assert_array_equal(img, before)


def test_composite_dims_mismatch():
    with pytest.raises(DataError):
        composite(rand_image(0, 4, 4), np.ones((4, 5), bool))


def test_mutant_mask_examples():
    p = split_region(full_region(4, 4), (2, 2))
    carrier = np.ones((4, 4), bool)
    np.testing.assert_array_equal(mutant_mask(SubsetMutant(p, 0b1111), carrier), carrier)
    assert not mutant_mask(SubsetMutant(p, 0), carrier).any()
    m = mutant_mask(SubsetMutant(p, 0b0101), carrier)
    expected = {(r, c) for r in range(2) for c in range(2)} | {(r, c) for r in range(2, 4) for c in range(2)}
    assert m.sum() == 8
    assert {tuple(x) for x in np.argwhere(m)} == expected


def test_mutant_mask_copies_carrier_outside_parent():
    carrier = np.zeros((6, 6), bool)
    carrier[0, 5] = True
    carrier[2:6, 0:4] = True
    p = split_region(Region(2, 0, 4, 4), (4, 2))
    m = mutant_mask(SubsetMutant(p, 0), carrier)
    assert m[0, 5] and m.sum() == 1


def test_enumerate_subsets_canonical():
    subs = enumerate_subsets(split_region(full_region(4, 4), (1, 3)))
    assert len(subs) == 16
    assert [s.retained for s in subs] == list(range(16))
    assert subs[0].parts() == ()
    assert subs[-1].parts() == (0, 1, 2, 3)


regions = st.builds(
    lambda t, l, h, w: Region(t, l, h, w),
    st.integers(0, 3), st.integers(0, 3), st.integers(2, 9), st.integers(2, 9),
)


@settings(max_examples=200)
@given(regions, st.integers(0, 2**32 - 1))
def test_partition_is_exact_cover(region, seed):
    p = split_region(region, draw_split_point(region, np.random.default_rng(seed)))
    grid = np.zeros((region.bottom + 1, region.right + 1), int)
    for part in p.parts:
        assert part.height >= 1 and part.width >= 1
        grid[part.slices] += 1
    inside = np.zeros_like(grid, dtype=bool)
    inside[region.slices] = True
    assert (grid[inside] == 1).all()
    assert (grid[~inside] == 0).all()


masks = st.integers(0, 2**16 - 1).map(lambda b: np.array([(b >> i) & 1 for i in range(16)], bool).reshape(4, 4))


@settings(max_examples=100)
@given(masks, masks, st.integers(0, 1000))
def test_composite_idempotent_and_conjunctive(m1, m2, seed):
    img = rand_image(seed, 4, 4)
    once = composite(img, m1, 0.3)
    np.testing.assert_array_equal(composite(once, m1, 0.3), once)
    np.testing.assert_array_equal(composite(img, m1 & m2, 0.3), composite(composite(img, m1, 0.3), m2, 0.3))


@settings(max_examples=100)
@given(regions, st.integers(0, 2**32 - 1), masks)
def test_subset_masks_match_mutant_mask_and_are_monotone(region, seed, noise):
    h, w = region.bottom + 1, region.right + 1
    carrier = np.ones((h, w), bool)
    carrier[: min(4, h), : min(4, w)] = noise[: min(4, h), : min(4, w)]
    p = split_region(region, draw_split_point(region, np.random.default_rng(seed)))
    stack = subset_masks(p, carrier)
    for b in range(16):
        np.testing.assert_array_equal(stack[b], mutant_mask(SubsetMutant(p, b), carrier))
        for b2 in range(16):
            if b & b2 == b:
                assert not (stack[b] & ~stack[b2]).any()


def test_mask_png_round_trip(tmp_path):
    m = np.random.default_rng(0).random((7, 5)) > 0.5
    save_mask_png(m, tmp_path / "m.png")
    from PIL import Image

    with Image.open(tmp_path / "m.png") as im:
        assert im.mode == "L" and im.size == (5, 7)
        assert set(np.unique(np.asarray(im))) <= {0, 255}
    np.testing.assert_array_equal(load_mask_png(tmp_path / "m.png"), m)
