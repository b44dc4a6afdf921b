"""Batch extraction over (model, image) pairs with on-disk records.

Layout of an output directory::

    run.json                      config, config hash, models, failures
    records/<model_id>/<id>.json  one MpsRecord each
    records/<model_id>/<id>.png   its mask (0 occluded, 255 retained)
    mps.csv                       aggregate, sorted by (model_id, image_id)
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .. import __version__
from ..errors import BackendError, DataError, MpsError
from ..extraction import MpsRecord, explain
from ..oracle import Oracle, oracle_from_entry
from ..responsibility import SearchConfig, save_landscape
from ..stats import SIGNIFICANCE
from .dataset import ingest_dataset, load_image

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "model_id",
    "image_id",
    "area_ratio",
    "predicted_class",
    "ground_truth",
    "correct",
    "degenerate",
    "oracle_calls_used",
]


@dataclass
class RunConfig:
    models: list[dict]
    dataset: str
    output: str
    labels: str | None = None
    search: SearchConfig = field(default_factory=SearchConfig)
    baseline: float | list[float] = 0.0
    chunk_fraction: float = 0.01
    significance: float = SIGNIFICANCE
    save_landscapes: bool = False
    base_dir: str = "."

    @classmethod
    def from_json(cls, d: dict, base_dir=".") -> "RunConfig":
        d = dict(d)
        if not d.get("models"):
            raise DataError("run config needs at least one model")
        for key in ("dataset", "output"):
            if key not in d:
                raise DataError(f"run config is missing {key!r}")
        search = SearchConfig(**d.pop("search", {}))
        search.validate()
        known = set(cls.__dataclass_fields__) - {"search", "base_dir"}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown run config keys: {sorted(unknown)}")
        ids = [m.get("model_id") for m in d["models"]]
        if None in ids or len(set(ids)) != len(ids):
            raise DataError("every model needs a unique model_id")
        cfg = cls(search=search, base_dir=str(base_dir), **d)
        if not 0 < cfg.chunk_fraction <= 1:
            raise DataError("chunk_fraction must lie in (0, 1]")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read run config {path}: {exc}") from exc
        return cls.from_json(raw, base_dir=path.parent)

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def config_hash(self) -> str:
        # output location does not change results, so it is not hashed
        d = self.to_json()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- per-process oracle cache (jobs may run in worker processes) --------------

_ORACLES: dict[str, Oracle] = {}


def _get_oracle(entry: dict, base_dir: str) -> Oracle:
    key = json.dumps(entry, sort_keys=True) + "|" + base_dir
    if key not in _ORACLES:
        _ORACLES[key] = oracle_from_entry(entry, base_dir)
    return _ORACLES[key]


def _job(args) -> dict:
    entry, base_dir, image_id, image_path, label, cfg, out_dir, meta = args
    oracle = _get_oracle(entry, base_dir)
    try:
        image = oracle.prepare(load_image(image_path))
        search = SearchConfig(**cfg["search"])
        record, landscape = explain(
            image,
            oracle,
            search,
            baseline=cfg["baseline"],
            chunk_fraction=cfg["chunk_fraction"],
            model_id=entry["model_id"],
            image_id=image_id,
        )
    except BackendError as exc:
        return {"model_id": entry["model_id"], "image_id": image_id, "error": str(exc), "backend": True}
    except MpsError as exc:
        return {"model_id": entry["model_id"], "image_id": image_id, "error": str(exc), "backend": False}
    record.with_ground_truth(label)
    record.meta.update(meta)
    target = Path(out_dir)
    record.save(target)
    if cfg["save_landscapes"]:
        save_landscape(landscape, target / f"{image_id}.landscape")
    return {"model_id": entry["model_id"], "image_id": image_id, "calls": record.oracle_calls_used}


@dataclass
class RunSummary:
    output: Path
    records: int
    new_records: int
    oracle_calls: int
    failed_models: dict[str, str]
    failed_jobs: list[dict]
    config_hash: str


def record_dir(output, model_id: str) -> Path:
    return Path(output) / "records" / model_id


def run_extraction(config: RunConfig, workers: int = 1, force: bool = False) -> RunSummary:
    out = config.resolve(config.output)
    out.mkdir(parents=True, exist_ok=True)
    dataset = ingest_dataset(config.resolve(config.dataset), config.resolve(config.labels))
    chash = config.config_hash()
    meta = {"config_hash": chash, "seed": config.search.seed, "version": __version__}
    cfg = {
        "search": asdict(config.search),
        "baseline": config.baseline,
        "chunk_fraction": config.chunk_fraction,
        "save_landscapes": config.save_landscapes,
    }

    models, failed = [], {}
    for entry in config.models:
        try:
            oracle = _get_oracle(entry, config.base_dir)
        except MpsError as exc:
            log.error("model %s failed to load: %s", entry["model_id"], exc)
            failed[entry["model_id"]] = str(exc)
            continue
        models.append(
            {
                "model_id": oracle.model_id,
                "architecture_tag": oracle.architecture_tag,
                "input_height": oracle.input_shape[0],
                "input_width": oracle.input_shape[1],
                "class_count": oracle.class_count,
                "entry": entry,
            }
        )

    jobs = []
    for m in models:
        d = record_dir(out, m["model_id"])
        for image_id, path in dataset.entries:
            if not force and (d / f"{image_id}.json").exists():
                continue
            jobs.append(
                (m["entry"], config.base_dir, image_id, str(path), dataset.label(image_id), cfg, str(d), meta)
            )

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs, chunksize=1))
    else:
        results = [_job(j) for j in jobs]

    failed_jobs = [r for r in results if "error" in r]
    for r in failed_jobs:
        if r["backend"]:
            failed.setdefault(r["model_id"], r["error"])
    run_info = {
        "config_hash": chash,
        "version": __version__,
        "config": config.to_json(),
        "models": [{k: v for k, v in m.items() if k != "entry"} for m in models],
        "failed_models": failed,
        "skipped_images": dataset.skipped,
        "images": dataset.image_ids,
    }
    with open(out / "run.json", "w") as fh:
        json.dump(run_info, fh, indent=2, sort_keys=True)
    n = write_aggregate_csv(out)
    return RunSummary(
        output=out,
        records=n,
        new_records=len(results) - len(failed_jobs),
        oracle_calls=sum(r.get("calls", 0) for r in results),
        failed_models=failed,
        failed_jobs=failed_jobs,
        config_hash=chash,
    )


def iter_record_files(output):
    root = Path(output) / "records"
    if not root.is_dir():
        return []
    return sorted(root.glob("*/*.json"), key=lambda p: (p.parent.name, p.stem))


def load_records(output) -> list[MpsRecord]:
    files = iter_record_files(output)
    if not files:
        raise DataError(f"no records under {output}")
    records = [MpsRecord.load(f) for f in files]
    records.sort(key=lambda r: (r.model_id, r.image_id))
    return records


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def write_aggregate_csv(output) -> int:
    rows = []
    for f in iter_record_files(output):
        with open(f) as fh:
            d = json.load(fh)
        rows.append(d)
    rows.sort(key=lambda d: (d["model_id"], d["image_id"]))
    tmp = Path(output) / "mps.csv.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for d in rows:
            w.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
    os.replace(tmp, Path(output) / "mps.csv")
    return len(rows)


def read_aggregate_csv(path) -> list[dict]:
    def parse_bool(s):
        return None if s == "" else s == "true"

    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    "model_id": row["model_id"],
                    "image_id": row["image_id"],
                    "area_ratio": float(row["area_ratio"]),
                    "predicted_class": int(row["predicted_class"]),
                    "ground_truth": None if row["ground_truth"] == "" else int(row["ground_truth"]),
                    "correct": parse_bool(row["correct"]),
                    "degenerate": parse_bool(row["degenerate"]),
                    "oracle_calls_used": int(row["oracle_calls_used"]),
                }
            )
    return out


def load_run_info(output) -> dict:
    path = Path(output) / "run.json"
    if not path.exists():
        return {}
    with open(path) as fh:
        return json.load(fh)
