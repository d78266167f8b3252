"""Operating curves, ordinal AUC and bootstrap intervals

A curve point is (overtriage rate, safe rate = 1 - undertriage rate) for
one dial setting P. The AUC is the right-step sum over the realized points
with no corner padding.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .backends import RaterBackend
from .core_model import Case, OrdinalScale, Persona, TriageClass
from .errors import DomainError, ReplicateError
from .inference import EnsembleOutput, collect_many, percentile_select, sweep_percentiles

logger = logging.getLogger("steer")

DEFAULT_GRID = tuple(float(p) for p in range(101))


def triage_rates(predictions: Sequence[int], scale: OrdinalScale) -> Tuple[float, float]:
    """(overtriage rate, undertriage rate) against the scale midpoint."""
    if len(predictions) == 0:
        raise DomainError("no predictions to score")
    classes = [scale.classify_triage(level) for level in predictions]
    n = len(classes)
    over = sum(c is TriageClass.OVERTRIAGE for c in classes) / n
    under = sum(c is TriageClass.UNDERTRIAGE for c in classes) / n
    return over, under


@dataclass(frozen=True)
class CurveRow:
    percentile: float
    overtriage: float
    safe_rate: float


@dataclass(frozen=True)
class OperatingCurve:
    rows: Tuple[CurveRow, ...]                  # one per grid value, in grid order
    points: Tuple[Tuple[float, float], ...]     # deduplicated, x ascending

    def __post_init__(self):
        for x, y in self.points:
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise DomainError(f"curve point ({x}, {y}) outside the unit square")


def dominant_points(pairs: Sequence[Tuple[float, float]]) -> Tuple[Tuple[float, float], ...]:
    """Collapse equal x to the max y and sort by x."""
    best: Dict[float, float] = {}
    for x, y in pairs:
        best[x] = max(y, best.get(x, -math.inf))
    return tuple(sorted(best.items()))


def selection_table(outputs: Sequence[EnsembleOutput], grid: Sequence[float]) -> Dict[float, List[int]]:
    """Selected level per case (in input order) for each P."""
    table: Dict[float, List[int]] = {p: [] for p in grid}
    for out in outputs:
        for p, level in sweep_percentiles(out, grid):
            table[p].append(level)
    return table


def curve_from_outputs(outputs: Sequence[EnsembleOutput], grid: Sequence[float] = DEFAULT_GRID,
                       scale: Optional[OrdinalScale] = None) -> OperatingCurve:
    if not outputs:
        raise DomainError("no ensemble outputs to build a curve from")
    scale = scale or outputs[0].scale
    table = selection_table(outputs, grid)
    rows = []
    for p in grid:
        over, under = triage_rates(table[p], scale)
        rows.append(CurveRow(p, over, 1.0 - under))
    return OperatingCurve(tuple(rows), dominant_points([(r.overtriage, r.safe_rate) for r in rows]))


def build_curve(team: Sequence[Persona], cases: Sequence[Case], rater: RaterBackend,
                scale: OrdinalScale, grid: Sequence[float] = DEFAULT_GRID,
                parallelism: int = 8) -> Tuple[OperatingCurve, List[EnsembleOutput]]:
    """Query the team once per case, then sweep the dial over the grid."""
    outputs = collect_many(team, cases, rater, scale, parallelism)
    return curve_from_outputs(outputs, grid, scale), outputs


def ordinal_auc(curve: Union[OperatingCurve, Sequence[Tuple[float, float]]]) -> float:
    """Right-step integral: sum (x[i+1] - x[i]) * y[i]."""
    points = curve.points if isinstance(curve, OperatingCurve) else tuple(curve)
    if not points:
        raise DomainError("curve has no points")
    xs = [x for x, _ in points]
    if any(b < a for a, b in zip(xs, xs[1:])):
        raise DomainError("curve points must be sorted by x")
    return float(sum((x1 - x0) * y0 for (x0, y0), (x1, _) in zip(points, points[1:])))


def bootstrap_ci(metric: Callable[[Sequence[str]], float], case_ids: Sequence[str],
                 iterations: int = 2000, confidence: float = 0.95,
                 seed: int = 0) -> Tuple[float, float, float]:
    """
    Percentile bootstrap over cases.

    Replicate r draws len(case_ids) ids with replacement from a generator
    seeded with (seed, r). Returns (low, high, full-sample estimate).

    Raises:
        ReplicateError: metric failed on a replicate (carries its index)
    """
    ids = list(case_ids)
    if len(ids) < 2:
        raise DomainError("bootstrap needs at least 2 cases")
    if iterations < 1:
        raise DomainError(f"iterations={iterations} must be >= 1")
    if not 0.0 < confidence < 1.0:
        raise DomainError(f"confidence={confidence} must lie in (0, 1)")

    point = float(metric(ids))
    values = np.empty(iterations)
    for r in range(iterations):
        rng = np.random.default_rng([seed, r])
        sample = [ids[i] for i in rng.integers(0, len(ids), size=len(ids))]
        try:
            values[r] = float(metric(sample))
        except Exception as e:
            raise ReplicateError(f"metric failed on bootstrap replicate {r}: {e}", replicate=r) from e

    alpha = (1.0 - confidence) / 2.0
    low, high = np.quantile(values, [alpha, 1.0 - alpha], method="inverted_cdf")
    return float(low), float(high), point


def auc_metric(outputs: Mapping[str, EnsembleOutput], grid: Sequence[float] = DEFAULT_GRID,
               scale: Optional[OrdinalScale] = None) -> Callable[[Sequence[str]], float]:
    """AUC over a (resampled) list of case ids, from cached ensemble outputs."""
    def metric(case_ids: Sequence[str]) -> float:
        return ordinal_auc(curve_from_outputs([outputs[c] for c in case_ids], grid, scale))
    return metric


def percentile_distribution(table: Mapping[float, Sequence[int]],
                            scale: OrdinalScale) -> Dict[float, Dict[int, float]]:
    """Per dial setting, the fraction of cases assigned to each level."""
    result: Dict[float, Dict[int, float]] = {}
    for p, levels in table.items():
        if not levels:
            raise DomainError(f"no selections at P={p}")
        counts = {level: 0 for level in scale.levels}
        for level in levels:
            counts[scale.check_level(level)] += 1
        result[p] = {level: c / len(levels) for level, c in counts.items()}
    return result


def safety_accuracy(outputs: Sequence[EnsembleOutput], cases: Mapping[str, Case],
                    percentile: float) -> float:
    """Exact-match accuracy of the dial's decision on ground-truth cases."""
    scored = [out for out in outputs if cases[out.case_id].ground_truth is not None]
    if not scored:
        raise DomainError("no unambiguous cases among the outputs")
    hits = sum(percentile_select(out, percentile).level == cases[out.case_id].ground_truth for out in scored)
    return hits / len(scored)


def static_persona_baseline(seed_pool: Sequence[Persona], n: int, seed: int = 0) -> List[Persona]:
    """n seed personas drawn without replacement, kept in pool order."""
    if not 1 <= n <= len(seed_pool):
        raise DomainError(f"cannot draw {n} personas from a pool of {len(seed_pool)}")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(seed_pool), size=n, replace=False).tolist())
    return [seed_pool[i] for i in chosen]


def sampling_baseline(persona: Persona, n: int) -> Tuple[List[Persona], List[int]]:
    """One persona queried n times; sample indices 0..n-1 keep draws distinct."""
    if n < 1:
        raise DomainError(f"n={n} must be >= 1")
    return [persona] * n, list(range(n))
