"""Ranking metrics with binary relevance."""

from __future__ import annotations

import math
from typing import Hashable, Sequence


class EmptyGoldError(ValueError):
    pass


def _check(gold, k: int | None = None) -> None:
    if not gold:
        raise EmptyGoldError("gold set is empty")
    if k is not None and k < 1:
        raise ValueError("k must be at least 1")


def recall_at_k(ranked: Sequence[Hashable], gold: set, k: int) -> float:
    """Fraction of gold items found in the first ``k`` ranked items."""
    _check(gold, k)
    return len(gold.intersection(ranked[:k])) / len(gold)


def mrr(ranked: Sequence[Hashable], gold: set) -> float:
    """Reciprocal rank of the first gold item, 0 when none is ranked."""
    _check(gold)
    for i, item in enumerate(ranked, start=1):
        if item in gold:
            return 1.0 / i
    return 0.0


def ndcg_at_k(ranked: Sequence[Hashable], gold: set, k: int) -> float:
    """DCG@k with gain 1/log2(rank+1) on gold hits over the ideal DCG@k."""
    _check(gold, k)
    dcg = sum(1.0 / math.log2(i + 1) for i, item in enumerate(ranked[:k], start=1) if item in gold)
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(k, len(gold)) + 1))
    return dcg / ideal


def weighted_mean(values: Sequence[float], sizes: Sequence[int]) -> float:
    total = sum(sizes)
    if total == 0:
        raise ValueError("weights sum to zero")
    return sum(n * v for n, v in zip(sizes, values)) / total
