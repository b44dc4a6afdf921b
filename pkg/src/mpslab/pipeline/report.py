"""Comparison report: area table, overlap matrices, rank tests, effect estimate."""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from ..errors import DataError
from ..setmetrics import pairwise_matrix, reference_grid
from ..stats import SIGNIFICANCE, bonferroni, fit_size_model, friedman, kruskal_wallis
from .selection import (
    accuracy_by_model,
    correctness_table,
    intersect_by_fidelity,
    select_top_models,
)

TABLE1_COLUMNS = ["Model", "Area", "Correct", "Incorrect", "Mean", "Accuracy"]
GRID_NOTE = "masks resampled (nearest neighbour) to the largest input height and width among compared models"


@dataclass
class ComparisonReport:
    header: dict
    area_summary: list[dict]
    matrices: dict = field(default_factory=dict)
    tests: list[dict] = field(default_factory=list)
    effect: dict = field(default_factory=dict)
    top_models: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "header": self.header,
            "area_summary": self.area_summary,
            "matrices": self.matrices,
            "tests": self.tests,
            "effect": self.effect,
            "top_models": self.top_models,
        }


def _mean(values):
    return float(np.mean(values)) if values else None


def _model_info(run_info):
    tags, dims = {}, {}
    for m in run_info.get("models", []):
        tags[m["model_id"]] = m.get("architecture_tag", m["model_id"])
        dims[m["model_id"]] = (m.get("input_height"), m.get("input_width"))
    return tags, dims


def area_summary(records, correctness, tags) -> list[dict]:
    by_model = defaultdict(list)
    for r in records:
        by_model[r.model_id].append(r)
    acc = accuracy_by_model(records, correctness)
    rows = []
    for m in sorted(by_model):
        usable = [r for r in by_model[m] if not r.degenerate]
        decided = [r for r in usable if correctness.get((m, r.image_id)) is not None]
        rows.append(
            {
                "model_id": m,
                "architecture_tag": tags.get(m, m),
                "area": _mean([r.area_ratio for r in decided]),
                "correct": _mean([r.area_ratio for r in decided if correctness[(m, r.image_id)]]),
                "incorrect": _mean([r.area_ratio for r in decided if not correctness[(m, r.image_id)]]),
                "mean": _mean([r.area_ratio for r in usable]),
                "accuracy": acc.get(m),
                "records": len(by_model[m]),
                "degenerate": len(by_model[m]) - len(usable),
            }
        )
    return rows


def _masks(records, models, images):
    out = {m: {} for m in models}
    for r in records:
        if r.model_id in out and r.image_id in images:
            out[r.model_id][r.image_id] = r.mask
    return out


def _usable_images(records, models):
    ok = defaultdict(set)
    for r in records:
        if r.model_id in models and not r.degenerate:
            ok[r.image_id].add(r.model_id)
    return {i for i, ms in ok.items() if ms == set(models)}


def _matrix_block(records, models, images, grid):
    images = sorted(images)
    masks = _masks(records, models, set(images))
    ids, d = pairwise_matrix(masks, "dice", images, grid)
    _, h = pairwise_matrix(masks, "hausdorff", images, grid)
    return {"models": ids, "images": len(images), "dice": d.tolist(), "hausdorff": h.tolist()}


def run_tests(records, tags, threshold=SIGNIFICANCE) -> list[dict]:
    usable = [r for r in records if not r.degenerate]
    by_model = defaultdict(dict)
    for r in usable:
        by_model[r.model_id][r.image_id] = r.area_ratio
    results = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if len(by_model) >= 2:
            try:
                res = kruskal_wallis({m: list(v.values()) for m, v in sorted(by_model.items())})
                res.test = "kruskal_wallis_models"
                results.append(res.finalize(threshold))
            except DataError as exc:
                results.append({"test": "kruskal_wallis_models", "error": str(exc)})
        by_tag = defaultdict(list)
        for m, v in by_model.items():
            by_tag[tags.get(m, m)].extend(v.values())
        if len(by_tag) >= 2 and len(by_tag) != len(by_model):
            try:
                res = kruskal_wallis(dict(sorted(by_tag.items())))
                res.test = "kruskal_wallis_architectures"
                results.append(res.finalize(threshold))
            except DataError as exc:
                results.append({"test": "kruskal_wallis_architectures", "error": str(exc)})
        family = []
        members = defaultdict(list)
        for m in sorted(by_model):
            members[tags.get(m, m)].append(m)
        for tag in sorted(members):
            ms = members[tag]
            if len(ms) < 2:
                continue
            common = sorted(set.intersection(*(set(by_model[m]) for m in ms)))
            name = f"friedman[{tag}]"
            if len(common) < 2:
                results.append({"test": name, "error": "fewer than two matched images"})
                continue
            try:
                res = friedman([[by_model[m][i] for m in ms] for i in common], labels=ms)
            except DataError as exc:
                results.append({"test": name, "error": str(exc)})
                continue
            res.test = name
            family.append(res)
        for res, p in zip(family, bonferroni([r.p_value for r in family])):
            res.corrected_p = p
            results.append(res.finalize(threshold))
    return [r if isinstance(r, dict) else r.to_json() for r in results]


def make_report(records, run_info=None, significance=SIGNIFICANCE) -> ComparisonReport:
    records = sorted(records, key=lambda r: (r.model_id, r.image_id))
    if not records:
        raise DataError("no records to report on")
    run_info = run_info or {}
    tags, dims = _model_info(run_info)
    for r in records:
        tags.setdefault(r.model_id, r.model_id)
        if dims.get(r.model_id, (None, None))[0] is None:
            dims[r.model_id] = r.mask.shape
    correctness, source = correctness_table(records)
    models = sorted({r.model_id for r in records})

    no_consensus = 0
    if source == "consensus":
        no_consensus = len({i for (m, i), v in correctness.items() if v is None})

    summary = area_summary(records, correctness, tags)

    decided = [replace(r, correct=correctness[(r.model_id, r.image_id)]) for r in records]
    top = {}
    compare = models
    sets = {}
    if source != "none" and any(v is not None for v in correctness.values()):
        try:
            top = select_top_models(decided, tags, accuracy_by_model(decided))
        except DataError:
            top = {}
        if top:
            compare = sorted(top.values())
        usable = _usable_images(records, compare)
        all_ok, all_bad = intersect_by_fidelity(decided, compare)
        sets = {"all_correct": all_ok & usable, "all_incorrect": all_bad & usable}
    else:
        sets = {"common": _usable_images(records, compare)}
    grid = reference_grid([tuple(dims[m]) for m in compare])
    matrices = {}
    for name, images in sets.items():
        if images:
            matrices[name] = _matrix_block(records, compare, images, grid)

    tests = run_tests(records, tags, significance)

    try:
        effect = fit_size_model([r for r in decided if r.correct is not None]).to_json()
    except DataError as exc:
        effect = {"error": str(exc)}

    header = {
        "records": len(records),
        "models": len(models),
        "degenerate": sum(r.degenerate for r in records),
        "correctness_source": source,
        "no_consensus_images": no_consensus,
        "reference_grid": list(grid),
        "grid_note": GRID_NOTE,
        "significance": significance,
        "effect_model": "fixed-effects least squares: area_ratio ~ model + incorrect",
        "config_hash": run_info.get("config_hash"),
        "seed": (run_info.get("config") or {}).get("search", {}).get("seed"),
        "version": run_info.get("version"),
    }
    return ComparisonReport(header, summary, matrices, tests, effect, top)


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------


def _num(v, digits=None):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if digits is None:
        return repr(float(v))
    return f"{v:.{digits}f}"


def table1_rows(report: ComparisonReport, digits=None) -> list[list[str]]:
    return [
        [
            row["model_id"],
            _num(row["area"], digits),
            _num(row["correct"], digits),
            _num(row["incorrect"], digits),
            _num(row["mean"], digits),
            _num(row["accuracy"], digits),
        ]
        for row in report.area_summary
    ]


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def to_markdown(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] * len(header)) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def matrix_rows(models, matrix, digits=None):
    return [[m] + [_num(v, digits) for v in row] for m, row in zip(models, matrix)]


def render(report: ComparisonReport, fmt: str = "md") -> str:
    """Table 1 followed by every overlap matrix, in CSV or Markdown."""
    if fmt not in ("csv", "md"):
        raise DataError(f"unknown format {fmt!r}")
    digits = 3 if fmt == "md" else None
    emit = to_markdown if fmt == "md" else to_csv
    parts = []
    if fmt == "md":
        parts.append("## Average MPS area (fraction of image)\n")
    parts.append(emit(TABLE1_COLUMNS, table1_rows(report, digits)))
    for name, block in report.matrices.items():
        for metric in ("dice", "hausdorff"):
            title = f"{metric} [{name}, {block['images']} images, grid {report.header['reference_grid']}]"
            parts.append(f"\n## {title}\n" if fmt == "md" else f"\n# {title}\n")
            parts.append(emit(["model_id"] + block["models"], matrix_rows(block["models"], block[metric], digits)))
    return "".join(parts)


def write_report(report: ComparisonReport, out_dir, records=None, tags=None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    put("report.json", json.dumps(report.to_json(), indent=2, sort_keys=True))
    rows = table1_rows(report)
    put("table1.csv", to_csv(TABLE1_COLUMNS, rows))
    put("table1.md", to_markdown(TABLE1_COLUMNS, table1_rows(report, 3)))
    for name, block in report.matrices.items():
        for metric in ("dice", "hausdorff"):
            header = ["model_id"] + block["models"]
            put(f"{metric}_{name}.csv", to_csv(header, matrix_rows(block["models"], block[metric])))
            put(f"{metric}_{name}.md", to_markdown(header, matrix_rows(block["models"], block[metric], 3)))
    if records is not None:
        from .plotting import plot_violin

        try:
            plot_violin(records, tags, out / "violins.svg")
            written.append(out / "violins.svg")
        except ValueError:
            pass
    return written


def verify_report(report_json: dict, aggregate_rows: list[dict], tol: float = 1e-12) -> list[str]:
    """Recompute the area table from the aggregate CSV rows; return mismatches."""
    rows = [SimpleNamespace(**row) for row in aggregate_rows]
    correctness, _ = correctness_table(rows)
    tags = {row["model_id"]: row.get("architecture_tag") for row in report_json["area_summary"]}
    expected = {row["model_id"]: row for row in area_summary(rows, correctness, tags)}
    problems = []
    for row in report_json["area_summary"]:
        exp = expected.pop(row["model_id"], None)
        if exp is None:
            problems.append(f"{row['model_id']}: not present in the aggregate CSV")
            continue
        for key in ("area", "correct", "incorrect", "mean", "accuracy"):
            want, got = exp[key], row[key]
            if (want is None) != (got is None) or (want is not None and abs(want - got) > tol):
                problems.append(f"{row['model_id']}: {key} {got} != recomputed {want}")
    for model_id in expected:
        problems.append(f"{model_id}: in the aggregate CSV but missing from the report")
    return problems
