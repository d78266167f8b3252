"""Percentile dial over a team's decisions

The N member decisions for a case are sorted from least to most
conservative and the one at rank k = floor(P/100 x (N-1)) is returned.
Raising P can only move the answer toward the urgent end.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .backends import RaterBackend
from .core_model import Case, OrdinalScale, Persona
from .errors import DomainError


@dataclass(frozen=True)
class MemberOutput:
    persona_id: str
    level: int
    bias: float = 0.0
    rationale: str = ""


@dataclass(frozen=True)
class EnsembleOutput:
    case_id: str
    outputs: Tuple[MemberOutput, ...]
    scale: OrdinalScale

    def __post_init__(self):
        if not self.outputs:
            raise DomainError(f"case {self.case_id!r} has no ensemble outputs")
        for out in self.outputs:
            self.scale.check_level(out.level)

    def distribution(self) -> Dict[int, int]:
        counts = {level: 0 for level in self.scale.levels}
        for out in self.outputs:
            counts[out.level] += 1
        return counts


@dataclass(frozen=True)
class Selection:
    level: int
    rank: int
    persona_id: str


def _rank_index(percentile: float, n: int) -> int:
    if not 0.0 <= percentile <= 100.0 or math.isnan(percentile):
        raise DomainError(f"percentile {percentile} outside [0, 100]")
    # round first so 50/100 x 9 stays 4.5 rather than 4.4999...
    return int(math.floor(round(percentile / 100.0 * (n - 1), 9)))


def sorted_outputs(outputs: EnsembleOutput) -> List[MemberOutput]:
    """Least to most conservative; ties by persona bias, then id."""
    scale = outputs.scale
    return sorted(
        outputs.outputs,
        key=lambda o: (scale.conservativeness_rank(o.level), o.bias, o.persona_id),
    )


def percentile_select(outputs: EnsembleOutput, percentile: float) -> Selection:
    ordered = sorted_outputs(outputs)
    k = _rank_index(percentile, len(ordered))
    chosen = ordered[k]
    return Selection(level=chosen.level, rank=k, persona_id=chosen.persona_id)


def sweep_percentiles(outputs: EnsembleOutput, grid: Sequence[float]) -> List[Tuple[float, int]]:
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise DomainError("percentile grid must be sorted ascending")
    ordered = sorted_outputs(outputs)
    return [(p, ordered[_rank_index(p, len(ordered))].level) for p in grid]


def collect_outputs(team: Sequence[Persona], case: Case, rater: RaterBackend,
                    scale: OrdinalScale, parallelism: int = 8,
                    samples: Optional[Sequence[int]] = None) -> EnsembleOutput:
    """
    Query every member on one case concurrently.

    samples, when given, pairs each member with a sample index (the
    repeated-sampling baseline queries one persona several times).
    """
    samples = list(samples) if samples is not None else [0] * len(team)
    if len(samples) != len(team):
        raise DomainError("samples must match the team size")
    workers = parallelism if getattr(rater, "supports_parallel", True) else 1

    def ask(index: int) -> MemberOutput:
        persona = team[index]
        result = rater.rate(persona, case, scale, samples[index])
        scale.check_level(result.level)
        label = persona.id if samples[index] == 0 else f"{persona.id}#{samples[index]}"
        return MemberOutput(label, result.level, persona.bias or 0.0, result.rationale)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outputs = list(pool.map(ask, range(len(team))))
    return EnsembleOutput(case.id, tuple(outputs), scale)


def collect_many(team: Sequence[Persona], cases: Sequence[Case], rater: RaterBackend,
                 scale: OrdinalScale, parallelism: int = 8,
                 samples: Optional[Sequence[int]] = None) -> List[EnsembleOutput]:
    """collect_outputs per case, preserving case order."""
    return [collect_outputs(team, c, rater, scale, parallelism, samples) for c in cases]
