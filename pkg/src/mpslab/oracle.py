"""Black-box classifiers: synthetic oracles with known sufficient sets, and ONNX models.

Every oracle works on *preprocessed* tensors of shape (H, W, C). Raw images are
turned into such tensors by ``oracle.prepare`` so that occlusion happens after
resizing and normalisation.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BackendError, DataError

RESIZE_STRATEGIES = ("stretch", "shorter-side-then-center-crop")
SYNTHETIC_KINDS = ("pixel_key", "threshold_region", "linear")


def as_image_tensor(values) -> np.ndarray:
    """Validate and return a float64 (H, W, C) array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise DataError(f"image tensor must be HxWxC with positive dims, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("image tensor contains non-finite values")
    return arr


@dataclass(frozen=True)
class Classification:
    class_index: int
    scores: np.ndarray

    @classmethod
    def from_scores(cls, scores) -> "Classification":
        scores = np.asarray(scores, dtype=np.float64).ravel()
        # np.argmax returns the first maximum, i.e. lowest index on ties
        return cls(int(np.argmax(scores)), scores)


def top_class(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax with lowest-index tie-break for a (N, K) score matrix."""
    return np.argmax(scores, axis=1)


class Oracle:
    """Common oracle surface.

    Subclasses implement ``_scores(batch)`` mapping an (N, H, W, C) array to an
    (N, K) score matrix, and set ``input_shape`` and ``class_count``.
    """

    model_id: str = "oracle"
    architecture_tag: str = ""
    input_shape: tuple[int, int, int]
    class_count: int
    thread_safe: bool = True

    def _scores(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def prepare(self, raw: np.ndarray) -> np.ndarray:
        """Turn a decoded image (H, W, C) with 0..255 values into an input tensor."""
        arr = np.asarray(raw, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = self.input_shape
        if arr.shape[2] != c:
            if arr.shape[2] == 1:
                arr = np.repeat(arr, c, axis=2)
            elif c == 1:
                arr = arr.mean(axis=2, keepdims=True)
            else:
                arr = arr[:, :, :c]
        if arr.shape[:2] != (h, w):
            arr = resize_image(arr, h, w, "stretch")
        return arr / 255.0

    def _check(self, image: np.ndarray) -> None:
        if image.shape != tuple(self.input_shape):
            raise DataError(
                f"{self.model_id}: expected input {tuple(self.input_shape)}, got {image.shape}"
            )

    def classify(self, image) -> Classification:
        image = as_image_tensor(image)
        self._check(image)
        scores = self._scores(image[None])
        return Classification.from_scores(scores[0])

    def classify_batch(self, images: Sequence) -> list[Classification]:
        if len(images) == 0:
            return []
        batch = np.stack([as_image_tensor(im) for im in images])
        for im in batch:
            self._check(im)
        scores = self._scores(batch)
        return [Classification.from_scores(row) for row in scores]

    def classes_batch(self, batch: np.ndarray) -> np.ndarray:
        """Fast path used by the search: class indices for a stacked batch."""
        if batch.shape[1:] != tuple(self.input_shape):
            raise DataError(
                f"{self.model_id}: expected input {tuple(self.input_shape)}, got {batch.shape[1:]}"
            )
        return top_class(self._scores(batch))


def classify(oracle: Oracle, image) -> Classification:
    return oracle.classify(image)


def classify_batch(oracle: Oracle, images: Sequence) -> list[Classification]:
    return oracle.classify_batch(images)


# --------------------------------------------------------------------------
# synthetic oracles
# --------------------------------------------------------------------------


@dataclass
class SyntheticOracleSpec:
    """Declarative description of a synthetic classifier.

    A pixel counts as *retained* when some channel differs from the baseline by
    more than ``match_tolerance``. Images fed to these oracles should therefore
    not contain pixels equal to the baseline.

    kind ``pixel_key``: class 1 iff every key pixel is retained.
    kind ``threshold_region``: class 1 iff at least ``threshold`` region pixels are retained.
    kind ``linear``: scores = weights . image + bias, shape of weights (K, H, W, C).
    """

    kind: str
    height: int
    width: int
    channels: int = 3
    key_pixels: list[tuple[int, int]] = field(default_factory=list)
    region: list[tuple[int, int]] = field(default_factory=list)
    threshold: int = 1
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    match_tolerance: float = 0.0
    baseline: float | list[float] = 0.0

    def validate(self) -> None:
        if self.kind not in SYNTHETIC_KINDS:
            raise DataError(f"unknown synthetic oracle kind {self.kind!r}")
        if min(self.height, self.width, self.channels) < 1:
            raise DataError("synthetic oracle dims must be >= 1")
        if self.match_tolerance < 0:
            raise DataError("match_tolerance must be nonnegative")
        if self.kind == "pixel_key":
            if not self.key_pixels:
                raise DataError("pixel_key oracle needs at least one key pixel")
            self._check_pixels(self.key_pixels, "key pixel")
        elif self.kind == "threshold_region":
            if not self.region:
                raise DataError("threshold_region oracle needs a nonempty region")
            self._check_pixels(self.region, "region pixel")
            if len(set(map(tuple, self.region))) != len(self.region):
                raise DataError("region pixels must be distinct")
            if not 1 <= self.threshold <= len(self.region):
                raise DataError(
                    f"threshold must lie in [1, {len(self.region)}], got {self.threshold}"
                )
        else:
            if self.weights is None:
                raise DataError("linear oracle needs a weight grid")
            w = np.asarray(self.weights)
            if w.ndim != 4 or w.shape[1:] != (self.height, self.width, self.channels):
                raise DataError(
                    f"weights must have shape (K, {self.height}, {self.width}, {self.channels}),"
                    f" got {w.shape}"
                )
            if self.bias is not None and np.asarray(self.bias).shape != (w.shape[0],):
                raise DataError("bias length must equal the number of classes")

    def _check_pixels(self, pixels, what):
        for r, c in pixels:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise DataError(f"{what} ({r}, {c}) outside {self.height}x{self.width}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["key_pixels"] = [list(p) for p in self.key_pixels]
        d["region"] = [list(p) for p in self.region]
        d["weights"] = None if self.weights is None else np.asarray(self.weights).tolist()
        d["bias"] = None if self.bias is None else np.asarray(self.bias).tolist()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticOracleSpec":
        d = dict(d)
        d["key_pixels"] = [tuple(p) for p in d.get("key_pixels", [])]
        d["region"] = [tuple(p) for p in d.get("region", [])]
        if d.get("weights") is not None:
            d["weights"] = np.asarray(d["weights"], dtype=np.float64)
        if d.get("bias") is not None:
            d["bias"] = np.asarray(d["bias"], dtype=np.float64)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown synthetic oracle fields: {sorted(unknown)}")
        return cls(**d)


class SyntheticOracle(Oracle):
    def __init__(self, spec: SyntheticOracleSpec, model_id="synthetic", architecture_tag="synthetic"):
        spec.validate()
        self.spec = spec
        self.model_id = model_id
        self.architecture_tag = architecture_tag
        self.input_shape = (spec.height, spec.width, spec.channels)
        self._baseline = np.broadcast_to(
            np.asarray(spec.baseline, dtype=np.float64), (spec.channels,)
        ).copy()
        if spec.kind == "linear":
            w = np.asarray(spec.weights, dtype=np.float64)
            self.class_count = w.shape[0]
            self._w = w.reshape(w.shape[0], -1)
            self._b = (
                np.zeros(w.shape[0]) if spec.bias is None else np.asarray(spec.bias, dtype=np.float64)
            )
        else:
            self.class_count = 2
            pix = spec.key_pixels if spec.kind == "pixel_key" else spec.region
            idx = np.asarray(pix, dtype=np.intp).reshape(-1, 2)
            self._rows, self._cols = idx[:, 0], idx[:, 1]

    def retained(self, batch: np.ndarray) -> np.ndarray:
        diff = np.abs(batch - self._baseline)
        return (diff > self.spec.match_tolerance).any(axis=-1)

    def _scores(self, batch: np.ndarray) -> np.ndarray:
        if self.spec.kind == "linear":
            flat = batch.reshape(batch.shape[0], -1)
            return flat @ self._w.T + self._b
        kept = self.retained(batch)[:, self._rows, self._cols]
        if self.spec.kind == "pixel_key":
            positive = kept.all(axis=1)
        else:
            positive = kept.sum(axis=1) >= self.spec.threshold
        scores = np.zeros((batch.shape[0], 2))
        scores[np.arange(batch.shape[0]), positive.astype(int)] = 1.0
        return scores


def make_synthetic_oracle(spec: SyntheticOracleSpec, model_id="synthetic", architecture_tag="synthetic"):
    return SyntheticOracle(spec, model_id=model_id, architecture_tag=architecture_tag)


class ConstantOracle(Oracle):
    """Always answers ``class_index``; handy for degenerate-case checks."""

    def __init__(self, input_shape, class_index=0, class_count=2, model_id="constant"):
        self.input_shape = tuple(input_shape)
        self.class_count = class_count
        self.model_id = model_id
        self._cls = class_index

    def _scores(self, batch):
        scores = np.zeros((batch.shape[0], self.class_count))
        scores[:, self._cls] = 1.0
        return scores


# --------------------------------------------------------------------------
# external models
# --------------------------------------------------------------------------


@dataclass
class ModelManifest:
    model_id: str
    architecture_tag: str
    model_path: str
    input_height: int
    input_width: int
    channel_means: list[float]
    channel_stds: list[float]
    resize_strategy: str
    class_count: int

    def validate(self) -> None:
        if self.input_height < 1 or self.input_width < 1:
            raise DataError(f"{self.model_id}: input dims must be >= 1")
        if len(self.channel_means) != len(self.channel_stds) or not self.channel_means:
            raise DataError(f"{self.model_id}: channel_means/channel_stds length mismatch")
        if any(s <= 0 for s in self.channel_stds):
            raise DataError(f"{self.model_id}: channel_stds must be strictly positive")
        if self.resize_strategy not in RESIZE_STRATEGIES:
            raise DataError(f"{self.model_id}: unknown resize_strategy {self.resize_strategy!r}")
        if self.class_count < 1:
            raise DataError(f"{self.model_id}: class_count must be positive")

    @classmethod
    def from_json(cls, d: dict) -> "ModelManifest":
        expected = set(cls.__dataclass_fields__)
        if set(d) != expected:
            raise DataError(
                f"manifest keys must be exactly {sorted(expected)}; got {sorted(d)}"
            )
        m = cls(**d)
        m.validate()
        return m

    @classmethod
    def load(cls, path) -> "ModelManifest":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return asdict(self)


def resize_image(arr: np.ndarray, height: int, width: int, strategy: str) -> np.ndarray:
    """Bilinear resize of an (H, W, C) float array."""
    from PIL import Image

    def _resize(a, h, w):
        chans = [
            np.asarray(
                Image.fromarray(a[:, :, k].astype(np.float32), mode="F").resize(
                    (w, h), Image.BILINEAR
                ),
                dtype=np.float64,
            )
            for k in range(a.shape[2])
        ]
        return np.stack(chans, axis=2)

    if strategy == "stretch":
        return _resize(arr, height, width)
    if strategy != "shorter-side-then-center-crop":
        raise DataError(f"unknown resize strategy {strategy!r}")
    h, w = arr.shape[:2]
    scale = max(height / h, width / w)
    nh, nw = max(height, round(h * scale)), max(width, round(w * scale))
    out = _resize(arr, nh, nw)
    top, left = (nh - height) // 2, (nw - width) // 2
    return out[top : top + height, left : left + width]


class OnnxOracle(Oracle):
    """An exported classifier run through onnxruntime.

    The graph must take a single float image input (NCHW or NHWC) and return
    a single (N, class_count) score output.
    """

    def __init__(self, manifest: ModelManifest):
        manifest.validate()
        self.manifest = manifest
        self.model_id = manifest.model_id
        self.architecture_tag = manifest.architecture_tag
        c = len(manifest.channel_means)
        self.input_shape = (manifest.input_height, manifest.input_width, c)
        self.class_count = manifest.class_count
        self._means = np.asarray(manifest.channel_means, dtype=np.float64)
        self._stds = np.asarray(manifest.channel_stds, dtype=np.float64)
        path = manifest.model_path
        if not os.path.exists(path):
            raise BackendError("model file not found", manifest.model_id, path)
        try:
            import onnxruntime as ort

            opts = ort.SessionOptions()
            opts.log_severity_level = 3
            self._session = ort.InferenceSession(
                path, sess_options=opts, providers=["CPUExecutionProvider"]
            )
        except Exception as exc:  # onnxruntime raises several unrelated types
            raise BackendError(f"cannot load graph: {exc}", manifest.model_id, path) from exc
        inputs, outputs = self._session.get_inputs(), self._session.get_outputs()
        if len(inputs) != 1 or len(outputs) < 1:
            raise BackendError(
                "unsupported graph: need one image input and a score output",
                manifest.model_id,
                path,
            )
        self._input_name = inputs[0].name
        self._output_name = outputs[0].name
        self._layout = self._detect_layout(inputs[0].shape)

    def _detect_layout(self, shape) -> str:
        h, w, c = self.input_shape
        dims = list(shape)
        if len(dims) != 4:
            raise BackendError(
                f"unsupported input rank {len(dims)}", self.model_id, self.manifest.model_path
            )

        def fits(got, want):
            return not isinstance(got, int) or got == want

        if fits(dims[1], c) and fits(dims[2], h) and fits(dims[3], w):
            return "NCHW"
        if fits(dims[1], h) and fits(dims[2], w) and fits(dims[3], c):
            return "NHWC"
        raise BackendError(
            f"graph input shape {dims} does not match manifest {h}x{w}x{c}",
            self.model_id,
            self.manifest.model_path,
        )

    def prepare(self, raw: np.ndarray) -> np.ndarray:
        arr = np.asarray(raw, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        c = self.input_shape[2]
        if arr.shape[2] != c:
            arr = np.repeat(arr[:, :, :1], c, axis=2) if arr.shape[2] == 1 else arr[:, :, :c]
        h, w = self.input_shape[:2]
        if arr.shape[:2] != (h, w):
            arr = resize_image(arr, h, w, self.manifest.resize_strategy)
        return (arr / 255.0 - self._means) / self._stds

    def _scores(self, batch: np.ndarray) -> np.ndarray:
        x = batch.astype(np.float32)
        if self._layout == "NCHW":
            x = np.ascontiguousarray(x.transpose(0, 3, 1, 2))
        try:
            (out,) = self._session.run([self._output_name], {self._input_name: x})[:1]
        except Exception as exc:
            raise BackendError(f"inference failed: {exc}", self.model_id, self.manifest.model_path) from exc
        out = np.asarray(out, dtype=np.float64).reshape(batch.shape[0], -1)
        if out.shape[1] != self.class_count:
            raise BackendError(
                f"score output has {out.shape[1]} classes, manifest says {self.class_count}",
                self.model_id,
                self.manifest.model_path,
            )
        return out


def load_external_model(manifest: ModelManifest) -> OnnxOracle:
    return OnnxOracle(manifest)


def oracle_from_entry(entry: dict, base_dir: str | os.PathLike = ".") -> Oracle:
    """Build an oracle from one ``models`` entry of a run config.

    An entry is either a manifest (exactly the manifest keys) or
    ``{"model_id", "architecture_tag", "synthetic": {...}}``.
    """
    if "synthetic" in entry:
        spec = SyntheticOracleSpec.from_json(entry["synthetic"])
        return SyntheticOracle(
            spec, model_id=entry["model_id"], architecture_tag=entry.get("architecture_tag", "synthetic")
        )
    d = dict(entry)
    if not os.path.isabs(d.get("model_path", "")):
        d["model_path"] = str(Path(base_dir) / d["model_path"])
    return load_external_model(ModelManifest.from_json(d))
