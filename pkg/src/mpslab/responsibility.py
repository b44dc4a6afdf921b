"""Iterative occlusion search producing a per-pixel responsibility landscape.

Each iteration draws a random quadrant split of the whole image, tests all 16
subsets of the four parts against the model, scores the parts, and recurses
depth-first into the parts of minimal passing subsets. Iterations are
independent given their seed, so they can run on a thread pool; results are
always reduced in iteration order. Sibling parts are visited in a random order
drawn from the iteration's generator, so a truncated budget does not always
starve the same corner of the image.

Part responsibility: for part p, the largest 1/|S| over passing subsets S that
contain p and stop passing when p is dropped (0 when no such S exists).
"""
from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BudgetExhausted, DataError
from .occlusion import (
    Partition,
    Region,
    can_split,
    composite_many,
    full_region,
    random_partition,
    subset_masks,
)

POPCOUNT = tuple(bin(b).count("1") for b in range(16))
ACCUMULATION_MODES = ("density", "uniform")


@dataclass
class SearchConfig:
    iterations: int = 20
    max_depth: int = 10
    min_side: int = 2
    mutant_budget: int = 4000
    seed: int = 0
    # "density": each pixel gets r / part area; "uniform": each pixel gets r
    accumulation: str = "density"

    def validate(self) -> None:
        if self.accumulation not in ACCUMULATION_MODES:
            raise DataError(f"accumulation must be one of {ACCUMULATION_MODES}")
        if self.iterations < 1:
            raise DataError("iterations must be >= 1")
        if self.mutant_budget < 16:
            raise DataError("mutant_budget must be >= 16")
        if self.max_depth < 1:
            raise DataError("max_depth must be >= 1")
        if self.min_side < 2:
            raise DataError("min_side must be >= 2")

    def iteration_budget(self) -> int:
        return max(16, self.mutant_budget // self.iterations)

    def runnable_iterations(self) -> int:
        return min(self.iterations, self.mutant_budget // self.iteration_budget())


class CallBudget:
    """Counts oracle calls against a ceiling."""

    def __init__(self, limit: int):
        self.limit = limit
        self.used = 0

    @property
    def remaining(self) -> int:
        return self.limit - self.used

    def take(self, n: int) -> None:
        if n > self.remaining:
            raise BudgetExhausted(f"need {n} calls, {self.remaining} left")
        self.used += n


@dataclass
class PassTable:
    partition: Partition
    outcomes: tuple[bool, ...]  # indexed by retained bitmask

    def __post_init__(self):
        if len(self.outcomes) != 16:
            raise DataError("a pass table has exactly 16 outcomes")


@dataclass
class ResponsibilityLandscape:
    scores: np.ndarray
    iterations_completed: int
    oracle_calls: int = 0
    truncated_branches: int = 0
    config: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


def evaluate_partition(image, carrier, partition, oracle, target_class, baseline=0.0, budget=None):
    """Test all 16 subset mutants of ``partition`` within ``carrier``."""
    carrier = np.asarray(carrier, dtype=bool)
    parent = partition.parent
    if not carrier[parent.slices].any():
        raise DataError("carrier is empty inside the partition's parent region")
    if budget is not None:
        budget.take(16)
    masks = subset_masks(partition, carrier)
    classes = oracle.classes_batch(composite_many(image, masks, baseline))
    return PassTable(partition, tuple(bool(c == target_class) for c in classes))


def part_responsibility(table) -> tuple[float, float, float, float]:
    outcomes = table.outcomes if isinstance(table, PassTable) else tuple(table)
    resp = [0.0, 0.0, 0.0, 0.0]
    for s in range(1, 16):
        if not outcomes[s]:
            continue
        share = 1.0 / POPCOUNT[s]
        for p in range(4):
            if s >> p & 1 and not outcomes[s & ~(1 << p)] and share > resp[p]:
                resp[p] = share
    return tuple(resp)


def minimal_passing_subsets(outcomes) -> list[int]:
    """Passing bitmasks none of whose proper subsets pass, ascending."""
    found = []
    for s in range(16):
        if not outcomes[s]:
            continue
        sub = (s - 1) & s
        minimal = True
        while True:
            if sub != s and outcomes[sub]:
                minimal = False
                break
            if sub == 0:
                break
            sub = (sub - 1) & s
        if minimal:
            found.append(s)
    return found


@dataclass
class _IterationResult:
    scores: np.ndarray
    calls: int
    truncated: int


def refine_and_accumulate(
    image,
    oracle,
    target_class,
    table,
    carrier,
    acc,
    config,
    rng,
    budget,
    baseline=0.0,
    depth=0,
):
    """Accumulate responsibility from ``table`` and recurse into its passing parts.

    Returns the number of branches cut short by the budget.
    """
    resp = part_responsibility(table)
    minimal = [s for s in minimal_passing_subsets(table.outcomes) if s]
    if not minimal:
        return 0
    # each part is refined once, inside the smallest minimal subset holding it
    home = {}
    for s in sorted(minimal, key=lambda b: (POPCOUNT[b], b)):
        for p in range(4):
            if s >> p & 1 and p not in home:
                home[p] = s
    parts = table.partition.parts
    for p in sorted(home):
        share = resp[p] / parts[p].area() if config.accumulation == "density" else resp[p]
        acc[parts[p].slices] += share
    if depth + 1 >= config.max_depth:
        return 0
    truncated = 0
    masks = None
    for p in rng.permutation(sorted(home)).tolist():
        part = parts[p]
        if resp[p] <= 0 or not can_split(part, config.min_side):
            continue
        if budget.remaining < 16:
            truncated += 1
            continue
        if masks is None:
            masks = subset_masks(table.partition, carrier)
        child_carrier = masks[home[p]]
        child = random_partition(part, rng)
        child_table = evaluate_partition(
            image, child_carrier, child, oracle, target_class, baseline, budget
        )
        truncated += refine_and_accumulate(
            image, oracle, target_class, child_table, child_carrier, acc,
            config, rng, budget, baseline, depth + 1,
        )
    return truncated


def iteration_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(index,))


def run_iteration(image, oracle, target_class, config, index, baseline=0.0) -> _IterationResult:
    h, w = image.shape[:2]
    acc = np.zeros((h, w), dtype=np.float64)
    rng = np.random.default_rng(iteration_seed(config.seed, index))
    budget = CallBudget(config.iteration_budget())
    root = full_region(h, w)
    if not can_split(root, config.min_side):
        return _IterationResult(acc, 0, 1)
    carrier = np.ones((h, w), dtype=bool)
    table = evaluate_partition(
        image, carrier, random_partition(root, rng), oracle, target_class, baseline, budget
    )
    truncated = refine_and_accumulate(
        image, oracle, target_class, table, carrier, acc, config, rng, budget, baseline
    )
    return _IterationResult(acc, budget.used, truncated)


def build_landscape(image, oracle, config=None, baseline=0.0, target_class=None, workers=1):
    """Mean responsibility landscape over ``config.iterations`` random restarts."""
    config = config or SearchConfig()
    config.validate()
    image = np.asarray(image, dtype=np.float64)
    if target_class is None:
        target_class = oracle.classify(image).class_index
    n = config.runnable_iterations()

    def job(i):
        return run_iteration(image, oracle, target_class, config, i, baseline)

    if workers > 1 and getattr(oracle, "thread_safe", False) and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(n)))
    else:
        results = [job(i) for i in range(n)]

    total = np.zeros(image.shape[:2], dtype=np.float64)
    for res in results:  # fixed order keeps float sums worker-independent
        total += res.scores
    return ResponsibilityLandscape(
        scores=total / n,
        iterations_completed=n,
        oracle_calls=sum(r.calls for r in results),
        truncated_branches=sum(r.truncated for r in results),
        config=asdict(config),
    )


def save_landscape(landscape: ResponsibilityLandscape, path) -> None:
    """Write ``<path>`` (u32 height, u32 width, float32 grid) and ``<path>.json``."""
    h, w = landscape.scores.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", h, w))
        fh.write(landscape.scores.astype("<f4").tobytes())
    meta = {
        "height": h,
        "width": w,
        "iterations_completed": landscape.iterations_completed,
        "oracle_calls": landscape.oracle_calls,
        "truncated_branches": landscape.truncated_branches,
        "config": landscape.config,
    }
    with open(f"{path}.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_landscape(path) -> ResponsibilityLandscape:
    with open(path, "rb") as fh:
        h, w = struct.unpack("<II", fh.read(8))
        scores = np.frombuffer(fh.read(), dtype="<f4")
    if scores.size != h * w:
        raise DataError(f"{path}: expected {h * w} floats, found {scores.size}")
    try:
        with open(f"{path}.json") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        meta = {}
    return ResponsibilityLandscape(
        scores=scores.reshape(h, w).astype(np.float64),
        iterations_completed=meta.get("iterations_completed", 0),
        oracle_calls=meta.get("oracle_calls", 0),
        truncated_branches=meta.get("truncated_branches", 0),
        config=meta.get("config", {}),
    )
