"""Feasibility cascade: safety, then coherence, then variance pruning

Variance pruning runs per bias cluster. Clusters come from a single pass
over the sorted biases, splitting at gaps of at least delta; delta is
calibrated from the bias range once and then frozen for the whole run.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .config import SelectionConfig
from .core_model import Case, RatingMatrix
from .errors import DomainError, ExtinctionError

logger = logging.getLogger("steer")

DELTA_MIN = 0.05
DELTA_MAX = 0.5
DELTA_RANGE_FRACTION = 0.25
DELTA_TIGHT_FRACTION = 0.15
DELTA_TIGHTEN_MIN_RANGE = 0.3

DENSITY_CHECK = "sequential-gap clustering at delta0 (no DBSCAN eps/min_pts)"

STAGES = ("evaluation", "safety", "coherence", "variance", "capacity")


def _count(q: float, n: int) -> float:
    # q*n rounded so that 0.15*20 is 3, not 3.0000000000000004
    return round(q * n, 9)


def nearest_rank(sorted_values: Sequence[float], q: float) -> float:
    """Empirical q-quantile without interpolation."""
    if not sorted_values:
        raise DomainError("quantile of an empty sequence")
    index = max(math.ceil(_count(q, len(sorted_values))) - 1, 0)
    return sorted_values[index]


@dataclass(frozen=True)
class Removal:
    persona_id: str
    stage: str
    metrics: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {"persona_id": self.persona_id, "stage": self.stage, "metrics": dict(self.metrics)}


@dataclass
class SelectionReport:
    survivors: List[str]
    removed: List[Removal]
    frozen_delta: Optional[float]
    delta_tightened: bool = False
    clusters: List[List[str]] = field(default_factory=list)
    density_check: str = DENSITY_CHECK

    def removed_ids(self, stage: Optional[str] = None) -> List[str]:
        return [r.persona_id for r in self.removed if stage is None or r.stage == stage]

    def to_dict(self) -> Dict:
        return {
            "survivors": list(self.survivors),
            "removed": [r.to_dict() for r in self.removed],
            "frozen_delta": self.frozen_delta,
            "delta_tightened": self.delta_tightened,
            "clusters": [list(c) for c in self.clusters],
            "density_check": self.density_check,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SelectionReport":
        return cls(
            survivors=list(data["survivors"]),
            removed=[Removal(r["persona_id"], r["stage"], dict(r.get("metrics", {}))) for r in data["removed"]],
            frozen_delta=data.get("frozen_delta"),
            delta_tightened=bool(data.get("delta_tightened", False)),
            clusters=[list(c) for c in data.get("clusters", [])],
            density_check=data.get("density_check", DENSITY_CHECK),
        )


def safety_score(ratings: RatingMatrix, persona: str, safety_cases: Iterable[Case]) -> float:
    """Exact-match accuracy on the unambiguous cases the persona rated."""
    hits = total = 0
    for case in safety_cases:
        if case.ground_truth is None:
            raise DomainError(f"safety case {case.id!r} has no ground_truth")
        level = ratings.get(case.id, persona)
        if level is None:
            continue
        total += 1
        hits += int(level == case.ground_truth)
    if total == 0:
        raise DomainError(f"persona {persona!r} has no safety ratings")
    return hits / total


def filter_safety(pool: Sequence[str], scores: Mapping[str, float],
                  config: SelectionConfig) -> List[str]:
    """Keep personas at or above the nearest-rank percentile cut, or above the absolute threshold."""
    if not pool:
        raise DomainError("cannot filter an empty pool")
    values = sorted(scores[p] for p in pool)
    cut = nearest_rank(values, config.safety_percentile)
    return [p for p in pool if scores[p] >= cut or scores[p] >= config.safety_threshold]


def filter_coherence(pool: Sequence[str], scores: Mapping[str, float],
                     config: SelectionConfig) -> List[str]:
    """Cull the bottom (1 - coherence_percentile) share; ties at the cut survive."""
    if not pool:
        raise DomainError("cannot filter an empty pool")
    values = sorted(scores[p] for p in pool)
    n_cull = math.floor(_count(1.0 - config.coherence_percentile, len(values)))
    if n_cull <= 0:
        return list(pool)
    cut = values[min(n_cull, len(values) - 1)]
    return [p for p in pool if scores[p] >= cut]


def _check_sorted(values: Sequence[float]):
    if any(b < a for a, b in zip(values, values[1:])):
        raise DomainError("biases must be sorted ascending")


def cluster_indices(sorted_biases: Sequence[float], delta: float) -> List[List[int]]:
    _check_sorted(sorted_biases)
    if delta <= 0:
        raise DomainError(f"delta={delta} must be > 0")
    clusters: List[List[int]] = []
    for i, value in enumerate(sorted_biases):
        if not clusters or value - sorted_biases[i - 1] >= delta:
            clusters.append([i])
        else:
            clusters[-1].append(i)
    return clusters


def cluster_by_bias(sorted_biases: Sequence[float], delta: float) -> List[List[float]]:
    """Split the sorted biases wherever the neighbor gap is >= delta."""
    return [[sorted_biases[i] for i in c] for c in cluster_indices(sorted_biases, delta)]


def _clamp_delta(value: float) -> float:
    return min(max(value, DELTA_MIN), DELTA_MAX)


def _calibrate(sorted_biases: Sequence[float]) -> Tuple[float, bool]:
    if len(sorted_biases) < 2:
        raise DomainError("delta calibration needs at least 2 biases")
    _check_sorted(sorted_biases)
    spread = sorted_biases[-1] - sorted_biases[0]
    delta = _clamp_delta(DELTA_RANGE_FRACTION * spread)
    if len(cluster_indices(sorted_biases, delta)) <= 1 and spread > DELTA_TIGHTEN_MIN_RANGE:
        return _clamp_delta(DELTA_TIGHT_FRACTION * spread), True
    return delta, False


def calibrate_cluster_threshold(sorted_biases: Sequence[float], generation: int = 1,
                                frozen: Optional[float] = None) -> float:
    """
    Clustering threshold delta.

    A frozen value is returned unchanged. Otherwise delta0 is 25% of the
    bias range clamped to [0.05, 0.5], tightened to 15% of the range when
    delta0 leaves everything in one cluster although the range exceeds 0.3.

    Raises:
        DomainError: generation > 1 without a frozen value, or fewer than
            2 biases
    """
    if frozen is not None:
        return frozen
    if generation > 1:
        raise DomainError(f"generation {generation}: the threshold is calibrated once and must be passed frozen")
    return _calibrate(sorted_biases)[0]


def prune_variance(clusters: Sequence[Sequence[str]], s2: Mapping[str, float],
                   config: SelectionConfig) -> List[str]:
    """Remove members above their cluster's nearest-rank s2 percentile."""
    removed: List[str] = []
    for cluster in clusters:
        missing = [p for p in cluster if p not in s2]
        if missing:
            raise DomainError(f"no residual variance for {missing[0]!r}")
        if len(cluster) < config.min_cluster_size:
            continue
        cut = nearest_rank(sorted(s2[p] for p in cluster), config.variance_percentile)
        removed.extend(p for p in cluster if s2[p] > cut)
    return removed


def apply_constraints(pool: Sequence[str], safety: Mapping[str, float],
                      coherence: Mapping[str, float], bias: Mapping[str, float],
                      s2: Mapping[str, float], config: SelectionConfig,
                      generation: int = 1, frozen_delta: Optional[float] = None) -> SelectionReport:
    """
    Run the cascade in its fixed order. Each stage's cut is computed on
    the population that survived the previous stage. The lowest- and
    highest-bias personas left after the coherence stage are exempt from
    variance pruning.

    Raises:
        DomainError: empty pool or missing descriptor
        ExtinctionError: no survivors
    """
    if not pool:
        raise ExtinctionError("population extinct: empty pool entered selection")
    for name, scores in (("safety", safety), ("coherence", coherence), ("bias", bias), ("s2", s2)):
        missing = [p for p in pool if p not in scores]
        if missing:
            raise DomainError(f"persona {missing[0]!r} has no {name} score")

    removed: List[Removal] = []
    safety_cut = nearest_rank(sorted(safety[p] for p in pool), config.safety_percentile)
    after_safety = filter_safety(pool, safety, config)
    kept = set(after_safety)
    removed += [
        Removal(p, "safety", {"safety": safety[p], "percentile_cut": safety_cut,
                              "threshold": config.safety_threshold})
        for p in pool if p not in kept
    ]

    after_coherence = filter_coherence(after_safety, coherence, config)
    kept = set(after_coherence)
    removed += [Removal(p, "coherence", {"coherence": coherence[p]}) for p in after_safety if p not in kept]

    ordered = sorted(after_coherence, key=lambda p: (bias[p], p))
    biases = [bias[p] for p in ordered]
    delta = config.cluster_delta if frozen_delta is None else frozen_delta
    tightened = False
    clusters: List[List[str]] = []
    survivors = list(after_coherence)

    if delta is None and len(ordered) >= 2:
        delta, tightened = _calibrate(biases)
        logger.info(
            f"Generation {generation}: calibrated clustering threshold delta={delta:.4f} "
            f"(range {biases[-1] - biases[0]:.4f}{', tightened' if tightened else ''})"
        )
    if delta is not None and ordered:
        clusters = [[ordered[i] for i in c] for c in cluster_indices(biases, delta)]
        # the spectrum ends stay, so the covered bias range never shrinks
        dropped = set(prune_variance(clusters, s2, config)) - {ordered[0], ordered[-1]}
        survivors = [p for p in after_coherence if p not in dropped]
        removed += [Removal(p, "variance", {"s2": s2[p]}) for p in ordered if p in dropped]

    for r in removed:
        logger.debug(f"Selection removed {r.persona_id} at {r.stage}: {r.metrics}")

    if not survivors:
        raise ExtinctionError("population extinct: selection removed every persona")

    return SelectionReport(
        survivors=survivors,
        removed=removed,
        frozen_delta=delta,
        delta_tightened=tightened,
        clusters=clusters,
    )
