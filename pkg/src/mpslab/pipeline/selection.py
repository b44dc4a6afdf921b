"""Model selection and correctness bookkeeping."""
from __future__ import annotations

from collections import Counter, defaultdict
from typing import Iterable, Mapping

from ..errors import DataError

NO_CONSENSUS = None


def accuracy_by_model(records, correctness: Mapping[tuple[str, str], bool | None] | None = None) -> dict[str, float]:
    """Fraction of decided records that are correct, per model."""
    hits, seen = defaultdict(int), defaultdict(int)
    for r in records:
        ok = r.correct if correctness is None else correctness.get((r.model_id, r.image_id))
        if ok is None:
            continue
        seen[r.model_id] += 1
        hits[r.model_id] += bool(ok)
    return {m: hits[m] / seen[m] for m in sorted(seen)}


def select_top_models(records, tags: Mapping[str, str], accuracy: Mapping[str, float] | None = None) -> dict[str, str]:
    """Best model per architecture tag; ties go to the smaller model_id."""
    acc = accuracy if accuracy is not None else accuracy_by_model(records)
    if not acc:
        raise DataError("no labelled records to rank models by")
    best: dict[str, tuple[float, str]] = {}
    for model_id, value in acc.items():
        tag = tags.get(model_id, model_id)
        cur = best.get(tag)
        if cur is None or value > cur[0] or (value == cur[0] and model_id < cur[1]):
            best[tag] = (value, model_id)
    return {tag: best[tag][1] for tag in sorted(best)}


def consensus_correctness(records) -> dict[str, int | None]:
    """Strict-majority predicted class per image, ``None`` when nobody has a majority."""
    votes: dict[str, Counter] = defaultdict(Counter)
    for r in records:
        votes[r.image_id][r.predicted_class] += 1
    out = {}
    for image_id in sorted(votes):
        counter = votes[image_id]
        total = sum(counter.values())
        cls, count = max(counter.items(), key=lambda kv: (kv[1], -kv[0]))
        out[image_id] = cls if 2 * count > total else NO_CONSENSUS
    return out


def correctness_table(records, min_voters: int = 3) -> tuple[dict[tuple[str, str], bool | None], str]:
    """Per-record correctness from labels, or from consensus when no labels exist.

    Returns the table and the source used: "labels", "consensus" or "none".
    """
    records = list(records)
    if any(r.ground_truth is not None for r in records):
        return {(r.model_id, r.image_id): r.correct for r in records}, "labels"
    if len({r.model_id for r in records}) < min_voters:
        return {(r.model_id, r.image_id): None for r in records}, "none"
    consensus = consensus_correctness(records)
    table = {}
    for r in records:
        cls = consensus.get(r.image_id)
        table[(r.model_id, r.image_id)] = None if cls is None else r.predicted_class == cls
    return table, "consensus"


def intersect_by_fidelity(
    records: Iterable, models: Iterable[str], correctness: Mapping[tuple[str, str], bool | None] | None = None
) -> tuple[set[str], set[str]]:
    """Images where every listed model is correct, and where every one is wrong."""
    models = set(models)
    status: dict[str, dict[str, bool | None]] = defaultdict(dict)
    for r in records:
        if r.model_id in models:
            ok = r.correct if correctness is None else correctness.get((r.model_id, r.image_id))
            status[r.image_id][r.model_id] = ok
    all_correct, all_incorrect = set(), set()
    for image_id, per_model in status.items():
        if set(per_model) != models:
            continue
        vals = list(per_model.values())
        if all(v is True for v in vals):
            all_correct.add(image_id)
        elif all(v is False for v in vals):
            all_incorrect.add(image_id)
    return all_correct, all_incorrect
