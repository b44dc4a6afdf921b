"""Synthetic datasets and oracle configs with known answers.

Images are uint8 with every channel in 1..255, so no pixel coincides with the
default zero baseline after dividing by 255.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataset import write_images, write_labels


def random_image(rng: np.random.Generator, height=32, width=32, channels=3, brightness=1.0) -> np.ndarray:
    hi = max(2, int(round(255 * brightness)))
    lo = max(1, hi // 2)
    return rng.integers(lo, hi + 1, size=(height, width, channels), dtype=np.int64).astype(np.uint8)


def planted_block(rng: np.random.Generator, size: int, height=32, width=32) -> list[tuple[int, int]]:
    """Pixels of a ``side x side`` square (side = sqrt(size)) at a random position."""
    side = int(round(size**0.5))
    if side * side != size:
        raise ValueError("planted block size must be a perfect square")
    r0 = int(rng.integers(0, height - side + 1))
    c0 = int(rng.integers(0, width - side + 1))
    return [(r0 + i, c0 + j) for i in range(side) for j in range(side)]


def pixel_key_entry(model_id, keys, height=32, width=32, channels=3, tag="synthetic") -> dict:
    return {
        "model_id": model_id,
        "architecture_tag": tag,
        "synthetic": {
            "kind": "pixel_key",
            "height": height,
            "width": width,
            "channels": channels,
            "key_pixels": [list(k) for k in keys],
        },
    }


def mass_threshold_entry(model_id, fraction, height=32, width=32, channels=3, tag="synthetic", mean_level=0.75) -> dict:
    """Affine oracle that wants retained intensity mass above a threshold.

    Class 1 iff the summed channel-mean intensity of retained pixels exceeds
    ``fraction * H * W * mean_level``, so for an image of average intensity
    ``mean_level`` about ``fraction`` of the pixels are needed; darker images
    need more.
    """
    w = np.zeros((2, height, width, channels))
    w[1] = 1.0 / channels
    tau = fraction * height * width * mean_level
    return {
        "model_id": model_id,
        "architecture_tag": tag,
        "synthetic": {
            "kind": "linear",
            "height": height,
            "width": width,
            "channels": channels,
            "weights": w.tolist(),
            "bias": [tau, 0.0],
        },
    }


def write_size_study(
    root,
    n_images=30,
    fractions=(0.01, 0.05, 0.20),
    height=32,
    width=32,
    seed=0,
    search=None,
    labels=None,
) -> Path:
    """Dataset plus run config for oracles with planted MPS sizes.

    Image brightness is drawn from [0.55, 1.0] so MPS sizes vary per image.
    Returns the path of the written ``run.json``.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    images = {
        f"img{i:03d}": random_image(rng, height, width, 3, brightness=float(rng.uniform(0.55, 1.0)))
        for i in range(n_images)
    }
    write_images(images, root / "images")
    models = [
        mass_threshold_entry(f"size{int(round(f * 100)):02d}", f, height, width, tag=f"arch{k}")
        for k, f in enumerate(fractions)
    ]
    config = {
        "models": models,
        "dataset": "images",
        "output": "out",
        "search": search or {"seed": seed},
    }
    if labels is not None:
        write_labels(labels, root / "labels.csv")
        config["labels"] = "labels.csv"
    path = root / "run.json"
    with open(path, "w") as fh:
        json.dump(config, fh)
    return path
