import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpslab.extraction import (
    MpsRecord,
    area_ratio,
    explain,
    extract_mps,
    max_extraction_calls,
    rank_pixels,
    verify_sufficiency,
)
from mpslab.oracle import ConstantOracle
from mpslab.responsibility import SearchConfig

from conftest import key_oracle, rand_image, region_oracle


class CountingOracle:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def classify(self, x):
        self.calls += 1
        return self.inner.classify(x)


def test_rank_all_zero_is_row_major():
    assert rank_pixels(np.zeros((3, 4))).tolist() == list(range(12))


def test_rank_unique_max_first():
    s = np.zeros((5, 5))
    s[2, 3] = 0.5
    assert rank_pixels(s)[0] == 2 * 5 + 3


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_rank_matches_sort_oracle(seed):
    # coarse values force plenty of ties
    s = np.random.default_rng(seed).integers(0, 4, size=(6, 7)) / 4
    expected = sorted(range(42), key=lambda i: (-s.flat[i], i))
    assert rank_pixels(s).tolist() == expected


def test_extract_singleton_key():
    img = rand_image(0)
    o = key_oracle([(2, 3)])
    land = np.zeros((8, 8))
    land[2, 3] = 1.0
    land[5, 5] = 0.5
    rec = extract_mps(img, land, o)
    assert {tuple(p) for p in np.argwhere(rec.mask)} == {(2, 3)}
    assert rec.area_ratio == 1 / 64
    assert not rec.degenerate
    assert verify_sufficiency(rec, img, o)


def test_extract_degenerate():
    o = ConstantOracle((8, 8, 3), class_index=0)
    rec = extract_mps(rand_image(1), np.zeros((8, 8)), o)
    assert rec.degenerate and rec.mask.sum() == 0 and rec.area_ratio == 0.0


def test_extract_threshold_region_lands_on_t():
    img = rand_image(2)
    region = [(1, c) for c in range(8)] + [(2, 0), (2, 1)]
    o = region_oracle(region, 5)
    land = np.zeros((8, 8))
    for r, c in region:
        land[r, c] = 1.0
    rec = extract_mps(img, land, o)
    kept = {tuple(p) for p in np.argwhere(rec.mask)}
    assert len(kept) == 5 and kept <= set(region)


def test_verify_sufficiency_examples():
    img = rand_image(3)
    o = key_oracle([(4, 4)])
    rec = extract_mps(img, np.eye(8), o)
    assert verify_sufficiency(rec, img, o)
    broken = MpsRecord("m", "i", rec.mask.copy(), 0.0, rec.predicted_class)
    broken.mask[4, 4] = False
    assert not verify_sufficiency(broken, img, o)
    full = MpsRecord("m", "i", np.ones((8, 8), bool), 1.0, rec.predicted_class)
    assert verify_sufficiency(full, img, o)


def test_area_ratio():
    assert area_ratio(np.ones((3, 3), bool)) == 1.0
    assert area_ratio(np.zeros((3, 3), bool)) == 0.0


def test_chunk_fraction_bounds():
    with pytest.raises(ValueError):
        extract_mps(rand_image(0), np.zeros((8, 8)), key_oracle([(0, 0)]), chunk_fraction=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.sampled_from([0.01, 0.05, 0.1, 0.5, 1.0]))
def test_prefix_minimal_and_call_bound(seed, t, cf):
    rng = np.random.default_rng(seed)
    img = rand_image(seed, 8, 8)
    region = [tuple(int(v) for v in divmod(i, 8)) for i in rng.choice(64, 30, replace=False)]
    o = CountingOracle(region_oracle(region, t))
    land = rng.random((8, 8))
    rec = extract_mps(img, land, o, chunk_fraction=cf, target_class=1)
    assert verify_sufficiency(rec, img, o.inner)
    k = int(rec.mask.sum())
    order = rank_pixels(land)
    shorter = np.zeros(64, bool)
    shorter[order[: k - 1]] = True
    assert o.inner.classify(np.where(shorter.reshape(8, 8)[:, :, None], img, 0.0)).class_index == 0
    chunk = math.ceil(cf * 64)
    assert o.calls == rec.oracle_calls_used
    assert o.calls <= math.ceil(1 / cf) + math.ceil(math.log2(chunk))
    assert o.calls <= max_extraction_calls(64, cf)


def test_extraction_is_deterministic():
    img = rand_image(5)
    o = key_oracle([(1, 2), (6, 6)])
    land = np.random.default_rng(0).random((8, 8))
    a = extract_mps(img, land, o)
    b = extract_mps(img, land, o)
    np.testing.assert_array_equal(a.mask, b.mask)


def test_explain_stays_within_budget():
    img = rand_image(6, 32, 32)
    o = CountingOracle(key_oracle([(10, 10), (10, 11), (11, 10), (11, 11)], 32, 32))
    o.input_shape = o.inner.input_shape
    o.classes_batch = lambda batch: (setattr(o, "calls", o.calls + len(batch)), o.inner.classes_batch(batch))[1]
    rec, land = explain(img, o, SearchConfig(seed=3))
    assert o.calls == rec.oracle_calls_used <= 4000
    assert rec.meta["iterations_completed"] == 20


def test_record_round_trip(tmp_path):
    rec = MpsRecord("m1", "img7", np.eye(5, dtype=bool), 0.2, 3, degenerate=False, oracle_calls_used=99)
    rec.with_ground_truth(4)
    path = rec.save(tmp_path)
    back = MpsRecord.load(path)
    np.testing.assert_array_equal(back.mask, rec.mask)
    assert (back.model_id, back.image_id, back.predicted_class, back.ground_truth, back.correct) == ("m1", "img7", 3, 4, False)
    assert (tmp_path / "img7.png").exists()
