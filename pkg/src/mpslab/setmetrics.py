"""Overlap and distance between pixel masks."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import DataError

METRICS = ("dice", "hausdorff")


def _pair(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DataError(f"mask dims differ: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b) -> float:
    """Sorensen-Dice overlap; two empty masks count as identical."""
    a, b = _pair(a, b)
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / (na + nb)


def _directed(a, b) -> float:
    # exact Euclidean distance from every pixel to the nearest pixel of b
    dist = ndimage.distance_transform_edt(~b)
    return float(dist[a].max())


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance in pixel units (exact)."""
    a, b = _pair(a, b)
    if not a.any() or not b.any():
        raise DataError("Hausdorff distance is undefined for an empty mask")
    return max(_directed(a, b), _directed(b, a))


def _round_half_down(num: np.ndarray, den: int) -> np.ndarray:
    # ceil(num/den - 1/2) in integer arithmetic
    return -((-(2 * num - den)) // (2 * den))


def resample_mask(mask, target_h: int, target_w: int) -> np.ndarray:
    """Nearest-neighbour resampling onto a ``target_h`` x ``target_w`` grid."""
    mask = np.asarray(mask, dtype=bool)
    if target_h < 1 or target_w < 1:
        raise DataError("target dims must be >= 1")
    h, w = mask.shape
    if (h, w) == (target_h, target_w):
        return mask.copy()
    rows = np.clip(_round_half_down(np.arange(target_h) * h, target_h), 0, h - 1)
    cols = np.clip(_round_half_down(np.arange(target_w) * w, target_w), 0, w - 1)
    return mask[np.ix_(rows, cols)]


def reference_grid(shapes: Sequence[tuple[int, int]]) -> tuple[int, int]:
    """Shared comparison grid: the largest height and width among the inputs."""
    return max(s[0] for s in shapes), max(s[1] for s in shapes)


def pairwise_matrix(
    masks_by_model: Mapping[str, Mapping[str, np.ndarray]],
    metric: str = "dice",
    images: Sequence[str] | None = None,
    grid: tuple[int, int] | None = None,
) -> tuple[list[str], np.ndarray]:
    """Mean metric between every pair of models over their common images.

    ``masks_by_model`` maps model_id -> image_id -> mask. Returns the sorted
    model ids and the symmetric matrix.
    """
    if metric not in METRICS:
        raise DataError(f"unknown metric {metric!r}")
    models = sorted(masks_by_model)
    if images is None:
        common = set.intersection(*(set(masks_by_model[m]) for m in models)) if models else set()
        images = sorted(common)
    if not images:
        raise DataError("no common images to compare")
    for m in models:
        missing = [i for i in images if i not in masks_by_model[m]]
        if missing:
            raise DataError(f"model {m} lacks records for {missing[:3]}")
    if grid is None:
        grid = reference_grid([masks_by_model[m][images[0]].shape for m in models])
    fn = dice if metric == "dice" else hausdorff
    resampled = {
        m: [resample_mask(masks_by_model[m][i], *grid) for i in images] for m in models
    }
    n = len(models)
    out = np.zeros((n, n))
    for i in range(n):
        out[i, i] = 1.0 if metric == "dice" else 0.0
        for j in range(i + 1, n):
            vals = [fn(a, b) for a, b in zip(resampled[models[i]], resampled[models[j]])]
            out[i, j] = out[j, i] = float(np.mean(vals))
    return models, out
