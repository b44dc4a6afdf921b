"""Turn a responsibility landscape into a minimal sufficient pixel set."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .occlusion import composite, load_mask_png, save_mask_png
from .responsibility import ResponsibilityLandscape, SearchConfig, build_landscape


@dataclass
class MpsRecord:
    model_id: str
    image_id: str
    mask: np.ndarray
    area_ratio: float
    predicted_class: int
    ground_truth: int | None = None
    correct: bool | None = None
    degenerate: bool = False
    oracle_calls_used: int = 0
    meta: dict = field(default_factory=dict)

    def with_ground_truth(self, label: int | None) -> "MpsRecord":
        self.ground_truth = None if label is None else int(label)
        self.correct = None if label is None else self.predicted_class == int(label)
        return self

    def to_json(self, mask_file: str) -> dict:
        h, w = self.mask.shape
        return {
            "model_id": self.model_id,
            "image_id": self.image_id,
            "mask_file": mask_file,
            "height": h,
            "width": w,
            "mask_area": int(self.mask.sum()),
            "area_ratio": self.area_ratio,
            "predicted_class": self.predicted_class,
            "ground_truth": self.ground_truth,
            "correct": self.correct,
            "degenerate": self.degenerate,
            "oracle_calls_used": self.oracle_calls_used,
            "meta": self.meta,
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        mask_name = f"{self.image_id}.png"
        save_mask_png(self.mask, directory / mask_name)
        path = directory / f"{self.image_id}.json"
        with open(path, "w") as fh:
            json.dump(self.to_json(mask_name), fh, indent=2, sort_keys=True)
        return path

    @classmethod
    def load(cls, path) -> "MpsRecord":
        path = Path(path)
        with open(path) as fh:
            d = json.load(fh)
        mask = load_mask_png(path.parent / d["mask_file"])
        return cls(
            model_id=d["model_id"],
            image_id=d["image_id"],
            mask=mask,
            area_ratio=d["area_ratio"],
            predicted_class=d["predicted_class"],
            ground_truth=d.get("ground_truth"),
            correct=d.get("correct"),
            degenerate=d.get("degenerate", False),
            oracle_calls_used=d.get("oracle_calls_used", 0),
            meta=d.get("meta", {}),
        )


def area_ratio(mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    return float(mask.sum()) / mask.size


def rank_pixels(landscape) -> np.ndarray:
    """Flat row-major indices, highest score first, ties by position."""
    scores = landscape.scores if isinstance(landscape, ResponsibilityLandscape) else landscape
    flat = np.asarray(scores, dtype=np.float64).ravel()
    # stable sort on the negated scores keeps row-major order among ties
    return np.argsort(-flat, kind="stable")


def max_extraction_calls(total_pixels: int, chunk_fraction: float) -> int:
    chunk = math.ceil(chunk_fraction * total_pixels)
    return math.ceil(1 / chunk_fraction) + math.ceil(math.log2(chunk))


def _passes(image, oracle, order, k, baseline, target):
    mask = np.zeros(image.shape[0] * image.shape[1], dtype=bool)
    mask[order[:k]] = True
    mask = mask.reshape(image.shape[:2])
    return oracle.classify(composite(image, mask, baseline)).class_index == target, mask


def extract_mps(
    image,
    landscape,
    oracle,
    baseline=0.0,
    chunk_fraction=0.01,
    target_class=None,
    model_id="",
    image_id="",
):
    """Grow the ranked prefix chunk by chunk, then bisect inside the last chunk."""
    if not 0 < chunk_fraction <= 1:
        raise ValueError("chunk_fraction must lie in (0, 1]")
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    total = h * w
    if target_class is None:
        target_class = oracle.classify(image).class_index
    order = rank_pixels(landscape)
    calls = 1
    ok, mask = _passes(image, oracle, order, 0, baseline, target_class)
    if ok:
        return MpsRecord(model_id, image_id, mask, 0.0, target_class, degenerate=True, oracle_calls_used=calls)

    chunk = math.ceil(chunk_fraction * total)
    lo, hi = 0, total  # prefix lo fails; prefix hi passes (hi=total is the original image)
    k = chunk
    while k < total:
        calls += 1
        ok, _ = _passes(image, oracle, order, k, baseline, target_class)
        if ok:
            hi = k
            break
        lo = k
        k += chunk
    while hi - lo > 1:
        mid = (lo + hi) // 2
        calls += 1
        ok, _ = _passes(image, oracle, order, mid, baseline, target_class)
        if ok:
            hi = mid
        else:
            lo = mid
    mask = np.zeros(total, dtype=bool)
    mask[order[:hi]] = True
    mask = mask.reshape(h, w)
    return MpsRecord(
        model_id, image_id, mask, area_ratio(mask), target_class, oracle_calls_used=calls
    )


def verify_sufficiency(record: MpsRecord, image, oracle, baseline=0.0) -> bool:
    return oracle.classify(composite(image, record.mask, baseline)).class_index == record.predicted_class


def explain(image, oracle, config=None, baseline=0.0, chunk_fraction=0.01, workers=1, model_id="", image_id=""):
    """Landscape plus extraction for one image, sharing one call budget.

    ``config.mutant_budget`` bounds the total oracle calls, so the landscape
    search gets what is left after reserving the extraction's worst case.
    """
    config = config or SearchConfig()
    image = np.asarray(image, dtype=np.float64)
    target = oracle.classify(image).class_index
    reserve = 1 + max_extraction_calls(image.shape[0] * image.shape[1], chunk_fraction)
    search = SearchConfig(**{**config.__dict__, "mutant_budget": max(16, config.mutant_budget - reserve)})
    landscape = build_landscape(image, oracle, search, baseline, target_class=target, workers=workers)
    record = extract_mps(
        image, landscape, oracle, baseline, chunk_fraction, target, model_id=model_id, image_id=image_id
    )
    record.oracle_calls_used += landscape.oracle_calls + 1  # + initial classification
    record.meta.update(
        iterations_completed=landscape.iterations_completed,
        truncated_branches=landscape.truncated_branches,
    )
    return record, landscape
