"""Image directories and label files."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import DataError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp", ".ppm"}


@dataclass
class Dataset:
    root: Path
    entries: list[tuple[str, Path]]
    labels: dict[str, int] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    @property
    def image_ids(self) -> list[str]:
        return [i for i, _ in self.entries]

    def path(self, image_id: str) -> Path:
        return dict(self.entries)[image_id]

    def label(self, image_id: str) -> int | None:
        return self.labels.get(image_id)


def load_image(path) -> np.ndarray:
    """Decode to an (H, W, C) uint8 array; grayscale stays single-channel."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    return arr[:, :, None] if arr.ndim == 2 else arr


def read_labels(path) -> dict[str, int]:
    labels = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip() == "image_id":
                continue
            if len(row) != 2:
                raise DataError(f"{path}: row {lineno}: expected image_id,class_index")
            image_id, cls = row[0].strip(), row[1].strip()
            try:
                value = int(cls)
            except ValueError:
                raise DataError(f"{path}: row {lineno}: class_index {cls!r} is not an integer") from None
            if value < 0 or not image_id:
                raise DataError(f"{path}: row {lineno}: invalid entry")
            labels[image_id] = value
    return labels


def ingest_dataset(path, labels_path=None, class_count: int | None = None) -> Dataset:
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"dataset path {root} is not a directory")
    entries, skipped = [], []
    for f in sorted(root.iterdir()):
        if not f.is_file() or f.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            with Image.open(f) as im:
                im.verify()
        except (UnidentifiedImageError, OSError, SyntaxError):
            skipped.append(f.name)
            continue
        entries.append((f.stem, f))
    if skipped:
        log.warning("skipped %d undecodable file(s): %s", len(skipped), ", ".join(skipped))
    if not entries:
        raise DataError(f"no decodable images in {root}")
    ids = [i for i, _ in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate image ids in {root}")
    entries.sort(key=lambda e: e[0])
    labels = {}
    if labels_path is not None:
        known = set(ids)
        for image_id, cls in read_labels(labels_path).items():
            if image_id not in known:
                log.warning("label for unknown image_id %r ignored", image_id)
                continue
            if class_count is not None and cls >= class_count:
                raise DataError(f"label {cls} for {image_id} exceeds class_count {class_count}")
            labels[image_id] = cls
    return Dataset(root, entries, labels, skipped)


def write_labels(labels: dict[str, int], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "class_index"])
        for k in sorted(labels):
            w.writerow([k, labels[k]])


def write_images(images: dict[str, np.ndarray], directory) -> None:
    """Save uint8 arrays as PNG files named ``<image_id>.png``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for image_id, arr in images.items():
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        Image.fromarray(arr).save(directory / f"{image_id}.png")
