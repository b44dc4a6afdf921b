import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpslab.errors import BackendError, DataError
from mpslab.occlusion import composite
from mpslab.oracle import (
    Classification,
    ModelManifest,
    SyntheticOracleSpec,
    classify,
    classify_batch,
    load_external_model,
    make_synthetic_oracle,
)

from conftest import key_oracle, rand_image, region_oracle, single_pixel_mask


def test_pixel_key_retained_key_is_class_one(image8):
    o = key_oracle([(1, 1)])
    m = single_pixel_mask(8, 8, [(1, 1)])
    assert classify(o, composite(image8, m)).class_index == 1


def test_pixel_key_fully_baseline_is_class_zero(image8):
    o = key_oracle([(1, 1)])
    assert classify(o, np.zeros_like(image8)).class_index == 0


def test_linear_zero_weights_ties_to_lowest_class(image8):
    spec = SyntheticOracleSpec("linear", 8, 8, 3, weights=np.zeros((4, 8, 8, 3)))
    res = classify(make_synthetic_oracle(spec), image8)
    assert res.class_index == 0
    assert len(res.scores) == 4


def test_make_synthetic_examples():
    img = rand_image(1, 6, 6)
    o = key_oracle([(2, 3)], 6, 6)
    assert o.classify(composite(img, single_pixel_mask(6, 6, [(2, 3)]))).class_index == 1

    region = [(0, c) for c in range(6)] + [(1, c) for c in range(4)]
    ro = region_oracle(region, 5, 6, 6)
    assert ro.classify(composite(img, single_pixel_mask(6, 6, region[:4]))).class_index == 0
    assert ro.classify(composite(img, single_pixel_mask(6, 6, region[:5]))).class_index == 1


def test_batch_empty_and_duplicates(image8):
    o = key_oracle([(3, 3)])
    assert classify_batch(o, []) == []
    a, b = classify_batch(o, [image8, image8])
    single = classify(o, image8)
    assert a.class_index == b.class_index == single.class_index
    np.testing.assert_array_equal(a.scores, single.scores)


def test_batch_of_partition_mutants_matches_loop(image8):
    from mpslab.occlusion import full_region, split_region, subset_masks

    spec = SyntheticOracleSpec(
        "linear", 8, 8, 3, weights=np.random.default_rng(5).normal(size=(3, 8, 8, 3))
    )
    o = make_synthetic_oracle(spec)
    masks = subset_masks(split_region(full_region(8, 8), (3, 5)), np.ones((8, 8), bool))
    mutants = [composite(image8, m) for m in masks]
    batched = classify_batch(o, mutants)
    looped = [classify(o, m) for m in mutants]
    assert len(batched) == 16
    for x, y in zip(batched, looped):
        assert x.class_index == y.class_index
        np.testing.assert_allclose(x.scores, y.scores, rtol=0, atol=1e-12)


def test_dimension_mismatch_raises():
    o = key_oracle([(0, 0)])
    with pytest.raises(DataError):
        o.classify(np.ones((7, 8, 3)))


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=12))
def test_tie_break_total(scores):
    c = Classification.from_scores(scores)
    best = max(scores)
    assert c.class_index == scores.index(best)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=4, unique=True),
    st.integers(0, 2**31),
)
def test_key_set_is_unique_minimal_sufficient_set(keys, seed):
    img = rand_image(seed, 6, 6)
    o = key_oracle(keys, 6, 6)
    assert o.classify(composite(img, single_pixel_mask(6, 6, keys))).class_index == 1
    for drop in range(len(keys)):
        sub = keys[:drop] + keys[drop + 1 :]
        assert o.classify(composite(img, single_pixel_mask(6, 6, sub))).class_index == 0
    # determinism
    a, b = o.classify(img), o.classify(img)
    assert a.class_index == b.class_index and np.array_equal(a.scores, b.scores)


def test_match_tolerance():
    o = key_oracle([(0, 0)], 2, 2, 1, match_tolerance=0.1)
    img = np.full((2, 2, 1), 0.05)
    assert o.classify(img).class_index == 0
    img[0, 0, 0] = 0.2
    assert o.classify(img).class_index == 1


@pytest.mark.parametrize(
    "spec",
    [
        SyntheticOracleSpec("pixel_key", 4, 4, key_pixels=[(4, 0)]),
        SyntheticOracleSpec("pixel_key", 4, 4),
        SyntheticOracleSpec("threshold_region", 4, 4, region=[(0, 0), (0, 1)], threshold=3),
        SyntheticOracleSpec("threshold_region", 4, 4, region=[(0, 0)], threshold=0),
        SyntheticOracleSpec("linear", 4, 4, weights=np.zeros((2, 3, 3, 3))),
        SyntheticOracleSpec("blur", 4, 4),
    ],
)
def test_invalid_specs(spec):
    with pytest.raises(DataError):
        make_synthetic_oracle(spec)


def test_spec_json_round_trip():
    spec = SyntheticOracleSpec(
        "linear", 2, 2, 1, weights=np.arange(8.0).reshape(2, 2, 2, 1), bias=np.array([1.0, -1.0])
    )
    back = SyntheticOracleSpec.from_json(json.loads(json.dumps(spec.to_json())))
    img = rand_image(3, 2, 2, 1)
    np.testing.assert_array_equal(
        make_synthetic_oracle(spec).classify(img).scores, make_synthetic_oracle(back).classify(img).scores
    )


# -- manifests and ONNX -------------------------------------------------------

MANIFEST = {
    "model_id": "toy",
    "architecture_tag": "linear",
    "model_path": "toy.onnx",
    "input_height": 6,
    "input_width": 5,
    "channel_means": [0.5, 0.5, 0.5],
    "channel_stds": [0.25, 0.25, 0.25],
    "resize_strategy": "stretch",
    "class_count": 2,
}


def export_linear(weights, bias, path, layout="NCHW"):
    """Write an ONNX graph computing weights . x + bias for one input."""
    onnx = pytest.importorskip("onnx")
    from onnx import TensorProto, helper, numpy_helper

    k, h, w, c = weights.shape
    if layout == "NCHW":
        wmat = weights.transpose(1, 2, 3, 0)  # (h, w, c, k)
        wmat = wmat.transpose(2, 0, 1, 3).reshape(c * h * w, k)
        shape = ["N", c, h, w]
    else:
        wmat = weights.transpose(1, 2, 3, 0).reshape(h * w * c, k)
        shape = ["N", h, w, c]
    nodes = [
        helper.make_node("Flatten", ["x"], ["flat"], axis=1),
        helper.make_node("MatMul", ["flat", "W"], ["mm"]),
        helper.make_node("Add", ["mm", "b"], ["scores"]),
    ]
    graph = helper.make_graph(
        nodes,
        "linear",
        [helper.make_tensor_value_info("x", TensorProto.FLOAT, shape)],
        [helper.make_tensor_value_info("scores", TensorProto.FLOAT, ["N", k])],
        initializer=[
            numpy_helper.from_array(wmat.astype(np.float32), "W"),
            numpy_helper.from_array(np.asarray(bias, dtype=np.float32), "b"),
        ],
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 20)])
    model.ir_version = 9
    onnx.save(model, str(path))


@pytest.mark.parametrize("layout", ["NCHW", "NHWC"])
def test_exported_linear_model_agrees_with_synthetic(tmp_path, layout):
    pytest.importorskip("onnxruntime")
    rng = np.random.default_rng(11)
    weights = rng.normal(size=(2, 6, 5, 3))
    bias = rng.normal(size=2)
    export_linear(weights, bias, tmp_path / "toy.onnx", layout)
    manifest = ModelManifest.from_json({**MANIFEST, "model_path": str(tmp_path / "toy.onnx")})
    ext = load_external_model(manifest)
    ref = make_synthetic_oracle(SyntheticOracleSpec("linear", 6, 5, 3, weights=weights, bias=bias))
    assert ext.input_shape == (6, 5, 3)
    for i in range(10):
        x = rng.normal(size=(6, 5, 3))
        a, b = ext.classify(x), ref.classify(x)
        assert a.class_index == b.class_index
        np.testing.assert_allclose(a.scores, b.scores, rtol=1e-4, atol=1e-4)


def test_external_prepare_resizes_and_normalises(tmp_path):
    pytest.importorskip("onnxruntime")
    export_linear(np.zeros((2, 6, 5, 3)), [0.0, 1.0], tmp_path / "toy.onnx")
    ext = load_external_model(ModelManifest.from_json({**MANIFEST, "model_path": str(tmp_path / "toy.onnx")}))
    raw = np.full((12, 10, 3), 255, dtype=np.uint8)
    x = ext.prepare(raw)
    assert x.shape == (6, 5, 3)
    np.testing.assert_allclose(x, (1.0 - 0.5) / 0.25)
    assert ext.classify(x).class_index == 1


def test_shorter_side_center_crop(tmp_path):
    pytest.importorskip("onnxruntime")
    export_linear(np.zeros((2, 6, 5, 3)), [0.0, 1.0], tmp_path / "toy.onnx")
    m = {**MANIFEST, "model_path": str(tmp_path / "toy.onnx"), "resize_strategy": "shorter-side-then-center-crop"}
    ext = load_external_model(ModelManifest.from_json(m))
    assert ext.prepare(np.full((40, 20, 3), 10, dtype=np.uint8)).shape == (6, 5, 3)


def test_missing_model_file_names_path(tmp_path):
    m = ModelManifest.from_json({**MANIFEST, "model_path": str(tmp_path / "nope.onnx")})
    with pytest.raises(BackendError, match="nope.onnx"):
        load_external_model(m)


def test_graph_shape_mismatch(tmp_path):
    pytest.importorskip("onnxruntime")
    export_linear(np.zeros((2, 4, 4, 3)), [0.0, 0.0], tmp_path / "toy.onnx")
    m = ModelManifest.from_json({**MANIFEST, "model_path": str(tmp_path / "toy.onnx")})
    with pytest.raises(BackendError, match="does not match"):
        load_external_model(m)


def test_garbage_graph_is_backend_error(tmp_path):
    (tmp_path / "toy.onnx").write_bytes(b"not a graph")
    m = ModelManifest.from_json({**MANIFEST, "model_path": str(tmp_path / "toy.onnx")})
    with pytest.raises(BackendError):
        load_external_model(m)


def test_manifest_json_keys_exact(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(MANIFEST))
    assert ModelManifest.load(p).to_json() == MANIFEST
    with pytest.raises(DataError):
        ModelManifest.from_json({**MANIFEST, "extra": 1})
    with pytest.raises(DataError):
        ModelManifest.from_json({**MANIFEST, "channel_stds": [1.0, 0.0, 1.0]})
    with pytest.raises(DataError):
        ModelManifest.from_json({**MANIFEST, "resize_strategy": "squash"})
