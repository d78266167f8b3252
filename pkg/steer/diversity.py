"""Decision entropy and the population diversity objective D(P)"""

import math
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

from .core_model import OrdinalScale, RatingMatrix
from .errors import DomainError


@dataclass(frozen=True)
class DecisionDistribution:
    counts: Tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise DomainError(f"negative count in {self.counts}")
        if self.total <= 0:
            raise DomainError("decision distribution needs at least one rating")

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @property
    def probabilities(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.total


def case_distribution(ratings: RatingMatrix, case: str, scale: OrdinalScale) -> DecisionDistribution:
    """Tally of levels given to one case; unrated personas are excluded."""
    levels = ratings.case_ratings(case)
    if not levels:
        raise DomainError(f"case {case!r} has no ratings")
    counts = [0] * scale.k_levels
    for level in levels:
        counts[scale.check_level(level) - 1] += 1
    return DecisionDistribution(tuple(counts))


def normalized_entropy(dist: DecisionDistribution, k_levels: int) -> float:
    """Shannon entropy (natural log) divided by log K; 0 log 0 = 0."""
    if k_levels < 2:
        raise DomainError(f"K={k_levels} must be >= 2")
    p = dist.probabilities
    p = p[p > 0]
    if len(p) <= 1:
        return 0.0
    value = float(-(p * np.log(p)).sum() / math.log(k_levels))
    if len(p) == k_levels and np.allclose(p, 1.0 / k_levels, rtol=0, atol=1e-15):
        return 1.0
    return min(max(value, 0.0), 1.0)


def mean_ambiguous_entropy(ratings: RatingMatrix, ambiguous_cases: Iterable[str],
                           scale: OrdinalScale) -> float:
    """D(P): mean normalized entropy over the ambiguous cases."""
    # sorted so that set inputs give bit-identical sums
    case_ids = sorted(set(ambiguous_cases))
    if not case_ids:
        raise DomainError("ambiguous case set is empty")
    entropies = [
        normalized_entropy(case_distribution(ratings, c, scale), scale.k_levels)
        for c in case_ids
    ]
    return float(np.mean(entropies))
