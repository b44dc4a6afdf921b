"""Quadrant partitions, subset mutants and baseline compositing."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DataError


class Region(NamedTuple):
    top: int
    left: int
    height: int
    width: int

    @property
    def bottom(self) -> int:
        return self.top + self.height

    @property
    def right(self) -> int:
        return self.left + self.width

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.top, self.bottom), slice(self.left, self.right)

    def area(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class Partition:
    parent: Region
    parts: tuple[Region, Region, Region, Region]


@dataclass(frozen=True)
class SubsetMutant:
    partition: Partition
    retained: int  # bitmask over parts 0..3

    def parts(self) -> tuple[int, ...]:
        return tuple(i for i in range(4) if self.retained >> i & 1)


def full_region(height: int, width: int) -> Region:
    return Region(0, 0, height, width)


def can_split(region: Region, min_side: int = 2) -> bool:
    return region.height >= max(2, min_side) and region.width >= max(2, min_side)


def split_region(region: Region, split_point: tuple[int, int]) -> Partition:
    """Cut ``region`` into four rectangles meeting at ``split_point`` (absolute coords).

    Parts are ordered above-left, above-right, below-left, below-right.
    """
    if not can_split(region):
        raise DataError(f"region {region} too small to split")
    r, c = split_point
    if not (region.top < r < region.bottom and region.left < c < region.right):
        raise DataError(f"split point {split_point} not strictly inside {region}")
    up, down = r - region.top, region.bottom - r
    lft, rgt = c - region.left, region.right - c
    parts = (
        Region(region.top, region.left, up, lft),
        Region(region.top, c, up, rgt),
        Region(r, region.left, down, lft),
        Region(r, c, down, rgt),
    )
    return Partition(region, parts)


def draw_split_point(region: Region, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform interior split point; the returned coordinate is absolute."""
    if not can_split(region):
        raise DataError(f"region {region} too small to split")
    r = int(rng.integers(1, region.height))
    c = int(rng.integers(1, region.width))
    return region.top + r, region.left + c


def random_partition(region: Region, rng: np.random.Generator) -> Partition:
    return split_region(region, draw_split_point(region, rng))


def enumerate_subsets(partition: Partition) -> list[SubsetMutant]:
    return [SubsetMutant(partition, b) for b in range(16)]


def part_masks(partition: Partition, shape: tuple[int, int]) -> np.ndarray:
    """(4, H, W) boolean stack, one layer per part."""
    out = np.zeros((4,) + tuple(shape), dtype=bool)
    for i, part in enumerate(partition.parts):
        out[(i,) + part.slices] = True
    return out


def mutant_mask(mutant: SubsetMutant, carrier: np.ndarray) -> np.ndarray:
    """Carrier with every non-retained part of the partition switched off."""
    carrier = np.asarray(carrier, dtype=bool)
    parent = mutant.partition.parent
    if parent.bottom > carrier.shape[0] or parent.right > carrier.shape[1]:
        raise DataError(f"partition {parent} exceeds mask dims {carrier.shape}")
    out = carrier.copy()
    for i, part in enumerate(mutant.partition.parts):
        if not mutant.retained >> i & 1:
            out[part.slices] = False
    return out


def subset_masks(partition: Partition, carrier: np.ndarray) -> np.ndarray:
    """All 16 mutant masks, indexed by retained bitmask; shape (16, H, W)."""
    carrier = np.asarray(carrier, dtype=bool)
    layers = part_masks(partition, carrier.shape)
    outside = carrier & ~layers.any(axis=0)
    bits = (np.arange(16)[:, None] >> np.arange(4)[None, :]) & 1  # (16, 4)
    inside = np.tensordot(bits.astype(bool), layers, axes=(1, 0)) > 0
    return (inside & carrier) | outside


def baseline_vector(baseline, channels: int) -> np.ndarray:
    vec = np.broadcast_to(np.asarray(baseline, dtype=np.float64), (channels,)).copy()
    if not np.all(np.isfinite(vec)):
        raise DataError("baseline must be finite")
    return vec


def composite(image: np.ndarray, mask: np.ndarray, baseline=0.0) -> np.ndarray:
    """Keep ``image`` where ``mask`` is true and paint ``baseline`` elsewhere."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise DataError(f"mask dims {mask.shape} do not match image dims {image.shape[:2]}")
    base = baseline_vector(baseline, image.shape[2])
    return np.where(mask[:, :, None], image, base)


def composite_many(image: np.ndarray, masks: np.ndarray, baseline=0.0) -> np.ndarray:
    """Vectorised ``composite`` over a stack of masks; returns (N, H, W, C)."""
    base = baseline_vector(baseline, image.shape[2])
    return np.where(masks[:, :, :, None], image[None], base)


def save_mask_png(mask: np.ndarray, path) -> None:
    from PIL import Image

    arr = np.asarray(mask, dtype=bool).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path, format="PNG", optimize=False)


def load_mask_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128
