"""Class rebalancing: interpolated over/under-sampling controlled by p_u.

p_u = 1 undersamples every class down to the minority count, p_u = 0
oversamples up to the majority count; values between interpolate linearly.
"""

import math
from collections import defaultdict
from typing import Callable, Hashable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def target_count(counts: dict[Hashable, int], p_u: float) -> int:
    """Common per-class size: round(min + (1 - p_u) * (max - min)).

    Rounds half away from zero so results don't depend on the platform's
    banker's rounding.
    """
    if not 0.0 <= p_u <= 1.0:
        raise ValueError(f"p_u must be in [0, 1], got {p_u}")
    if len(counts) < 2:
        raise ValueError("need at least two classes to rebalance")
    if any(c < 1 for c in counts.values()):
        raise ValueError("every class count must be >= 1")
    lo = min(counts.values())
    hi = max(counts.values())
    return int(math.floor(lo + (1.0 - p_u) * (hi - lo) + 0.5))


def class_counts(labels: Sequence[Hashable]) -> dict[Hashable, int]:
    counts: dict[Hashable, int] = defaultdict(int)
    for y in labels:
        counts[y] += 1
    return dict(counts)


def rebalance(
    examples: Sequence[T],
    p_u: float,
    seed: int,
    label_of: Callable[[T], Hashable] = lambda ex: ex.label,
) -> list[T]:
    """Resample `examples` so every class has exactly the target count.

    Classes above target are subsampled uniformly without replacement; classes
    below keep every original once and add uniform-with-replacement
    duplicates. The result is shuffled deterministically by `seed`.
    """
    by_class: dict[Hashable, list[int]] = defaultdict(list)
    for i, ex in enumerate(examples):
        by_class[label_of(ex)].append(i)
    counts = {label: len(idx) for label, idx in by_class.items()}
    target = target_count(counts, p_u)

    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for label in sorted(by_class, key=str):
        idx = np.asarray(by_class[label])
        n = len(idx)
        if n > target:
            chosen.extend(rng.choice(idx, size=target, replace=False).tolist())
        elif n < target:
            extra = rng.choice(idx, size=target - n, replace=True).tolist()
            chosen.extend(idx.tolist() + extra)
        else:
            chosen.extend(idx.tolist())

    order = rng.permutation(len(chosen))
    return [examples[chosen[j]] for j in order]


def resample_report(
    before: dict[Hashable, int], after: dict[Hashable, int]
) -> list[tuple[str, int, int]]:
    """Rows (class, before, after) sorted by class name, for the TSV report."""
    labels = sorted(set(before) | set(after), key=str)
    return [(str(lbl), before.get(lbl, 0), after.get(lbl, 0)) for lbl in labels]
