"""Persona generation: gap filling, edge expansion and targeting scores

Gap filling aims a new persona at the midpoint of a void in the sorted bias
list. Edge expansion aims beyond the current extremes. Both are checked
after the fact, once the newborn's bias has been measured.
"""

import logging
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .core_model import OrdinalScale, Persona, PersonaOrigin
from .errors import DomainError
from .prompts import PromptTemplates, format_bias, reference_blocks

logger = logging.getLogger("steer")

CONSERVATIVE = "conservative"
LENIENT = "lenient"

EDGE_DECILE = 0.1

Reference = Tuple[str, float]


class TargetingCategory(str, Enum):
    EXCELLENT = "excellent"
    GOOD = "good"
    ACCEPTABLE = "acceptable"
    POOR = "poor"


# (upper bound, inclusive?, category); checked in order
TARGETING_BANDS = (
    (0.2, False, TargetingCategory.EXCELLENT),
    (0.5, True, TargetingCategory.GOOD),
    (1.0, True, TargetingCategory.ACCEPTABLE),
)


@dataclass(frozen=True)
class GenerationRequest:
    request_id: str
    kind: PersonaOrigin
    target_bias: float
    references: Tuple[Reference, ...]
    direction: Optional[str] = None
    rendered_prompt: str = ""
    previous_range: Optional[Tuple[float, float]] = None
    generation: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PersonaOrigin(self.kind))
        if self.kind is PersonaOrigin.SEED:
            raise DomainError("seed personas are not generated")
        if self.kind is PersonaOrigin.GAP_FILL:
            if len(self.references) != 2:
                raise DomainError(f"gap-fill request {self.request_id} needs exactly two references")
            low, high = sorted(bias for _, bias in self.references)
            if not low < self.target_bias < high:
                raise DomainError(f"gap-fill target {self.target_bias} is not inside ({low}, {high})")
            if self.direction is not None:
                raise DomainError("gap-fill requests have no direction")
        else:
            if len(self.references) != 1:
                raise DomainError(f"edge request {self.request_id} needs exactly one reference")
            if self.direction not in (CONSERVATIVE, LENIENT):
                raise DomainError(f"edge direction {self.direction!r} must be conservative or lenient")

    def to_dict(self) -> Dict:
        return {
            "request_id": self.request_id,
            "kind": self.kind.value,
            "target_bias": self.target_bias,
            "references": [{"prompt_text": t, "bias": b} for t, b in self.references],
            "direction": self.direction,
            "rendered_prompt": self.rendered_prompt,
            "previous_range": list(self.previous_range) if self.previous_range else None,
            "generation": self.generation,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "GenerationRequest":
        previous = data.get("previous_range")
        return cls(
            request_id=data["request_id"],
            kind=PersonaOrigin(data["kind"]),
            target_bias=float(data["target_bias"]),
            references=tuple((r["prompt_text"], float(r["bias"])) for r in data["references"]),
            direction=data.get("direction"),
            rendered_prompt=data.get("rendered_prompt", ""),
            previous_range=tuple(previous) if previous else None,
            generation=int(data.get("generation", 0)),
        )


@dataclass(frozen=True)
class Gap:
    left: float
    right: float
    left_ref: Optional[Reference] = None
    right_ref: Optional[Reference] = None

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def target(self) -> float:
        return (self.left + self.right) / 2.0


@dataclass(frozen=True)
class GapReport:
    gaps: Tuple[Gap, ...] = ()

    def __len__(self) -> int:
        return len(self.gaps)

    @property
    def max_width(self) -> float:
        return self.gaps[0].width if self.gaps else 0.0


def _gap_report(refs: Sequence[Reference]) -> GapReport:
    if len(refs) < 2:
        raise DomainError("gap search needs at least 2 biases")
    biases = [b for _, b in refs]
    if any(b < a for a, b in zip(biases, biases[1:])):
        raise DomainError("biases must be sorted ascending")
    gaps = [
        (Gap(a[1], b[1], a, b), i)
        for i, (a, b) in enumerate(zip(refs, refs[1:]))
        if b[1] - a[1] > 0
    ]
    gaps.sort(key=lambda item: (-item[0].width, item[1]))
    return GapReport(tuple(g for g, _ in gaps))


def find_gaps(sorted_biases: Sequence[float]) -> GapReport:
    """Adjacent-pair gaps, widest first, leftmost first among equals."""
    return _gap_report([("", float(b)) for b in sorted_biases])


def find_pool_gaps(personas: Sequence[Persona]) -> GapReport:
    """find_gaps over measured personas, keeping their prompts as references."""
    ordered = sorted((p for p in personas if p.bias is not None), key=lambda p: (p.bias, p.id))
    return _gap_report([(p.prompt_text, p.bias) for p in ordered])


def split_budget(budget: int, gap_ratio: float = 0.7) -> Tuple[int, int]:
    if budget < 0:
        raise DomainError(f"budget={budget} must be >= 0")
    n_gap = int(round(round(gap_ratio * budget, 9)))
    return n_gap, budget - n_gap


def edge_step(extremes: Tuple[float, float], fraction: float = 0.5, floor: float = 0.25) -> float:
    return max(fraction * (extremes[1] - extremes[0]), floor)


def request_id(generation: int, kind: PersonaOrigin, index: int) -> str:
    short = "gap" if kind is PersonaOrigin.GAP_FILL else "edge"
    return f"g{generation:02d}-{short}-{index:03d}"


def plan_generation(gaps: GapReport, extremes: Tuple[float, float], budget: int,
                    gap_ratio: float = 0.7, scale: OrdinalScale = OrdinalScale(),
                    edge_references: Optional[Tuple[Reference, Reference]] = None,
                    step_fraction: float = 0.5, step_floor: float = 0.25,
                    generation: int = 0) -> List[GenerationRequest]:
    """
    Exactly `budget` requests: round(gap_ratio x budget) gap fills cycling
    over the widest gaps, the rest edge expansions alternating
    conservative/lenient. Edge targets are clamped to the bias bounds
    [1, K]. Without gaps every slot is an edge request.
    """
    if budget < 1:
        raise DomainError(f"budget={budget} must be >= 1")
    low, high = extremes
    if high < low:
        raise DomainError(f"extremes {extremes} are reversed")
    n_gap, n_edge = split_budget(budget, gap_ratio)
    if not gaps.gaps:
        n_gap, n_edge = 0, budget
    low_ref, high_ref = edge_references or (("", low), ("", high))

    requests: List[GenerationRequest] = []
    for i in range(n_gap):
        gap = gaps.gaps[i % len(gaps.gaps)]
        requests.append(GenerationRequest(
            request_id=request_id(generation, PersonaOrigin.GAP_FILL, len(requests)),
            kind=PersonaOrigin.GAP_FILL,
            target_bias=gap.target,
            references=(gap.left_ref or ("", gap.left), gap.right_ref or ("", gap.right)),
            previous_range=(low, high),
            generation=generation,
        ))

    step = edge_step(extremes, step_fraction, step_floor)
    # fitted biases live in [1, K]; a target outside it is unreachable
    floor_bias, ceiling_bias = 1.0, float(scale.k_levels)
    for i in range(n_edge):
        direction = CONSERVATIVE if i % 2 == 0 else LENIENT
        side = scale.conservative_sign if direction == CONSERVATIVE else -scale.conservative_sign
        if side < 0:
            target, reference = max(low - step, floor_bias), low_ref
        else:
            target, reference = min(high + step, ceiling_bias), high_ref
        requests.append(GenerationRequest(
            request_id=request_id(generation, PersonaOrigin.EDGE_EXPAND, len(requests)),
            kind=PersonaOrigin.EDGE_EXPAND,
            target_bias=target,
            references=(reference,),
            direction=direction,
            previous_range=(low, high),
            generation=generation,
        ))
    return requests


def render_request(request: GenerationRequest, templates: PromptTemplates,
                   gap_template: str = "gap_fill.j2", edge_template: str = "edge_expand.j2",
                   role: str = "emergency physician",
                   setting: str = "busy urban emergency department") -> GenerationRequest:
    """Return the request with rendered_prompt filled in."""
    context = {
        "role": role,
        "setting": setting,
        "target_bias": format_bias(request.target_bias),
        "references": reference_blocks(request.references),
    }
    if request.kind is PersonaOrigin.GAP_FILL:
        start, end = sorted(bias for _, bias in request.references)
        context.update(start_bias=format_bias(start), end_bias=format_bias(end))
        text = templates.render(gap_template, "gap_fill", context)
    else:
        context["direction"] = request.direction.capitalize()
        text = templates.render(edge_template, "edge_expand", context)
    return replace(request, rendered_prompt=text)


def newborn(request: GenerationRequest, prompt_text: str) -> Persona:
    if not prompt_text or not prompt_text.strip():
        raise DomainError(f"generator returned an empty persona for {request.request_id}")
    return Persona(
        id=request.request_id,
        prompt_text=prompt_text.strip(),
        origin=request.kind,
        target_bias=request.target_bias,
        generation_born=request.generation,
    )


@dataclass(frozen=True)
class TargetingScore:
    category: TargetingCategory
    error: float


def score_targeting(target: float, actual: float) -> TargetingScore:
    error = abs(actual - target)
    for bound, inclusive, category in TARGETING_BANDS:
        if error < bound or (inclusive and error == bound):
            return TargetingScore(category, error)
    return TargetingScore(TargetingCategory.POOR, error)


@dataclass(frozen=True)
class EdgeScore:
    reached_decile: bool
    extension: float


def score_edge_expansion(previous_range: Tuple[float, float], direction: str, actual_bias: float,
                         scale: OrdinalScale = OrdinalScale()) -> EdgeScore:
    """Did an edge persona land in the outer 10% of the old range, or beyond it?"""
    low, high = previous_range
    span = high - low
    if span <= 0:
        raise DomainError(f"previous range {previous_range} is degenerate")
    if direction not in (CONSERVATIVE, LENIENT):
        raise DomainError(f"edge direction {direction!r} must be conservative or lenient")
    side = scale.conservative_sign if direction == CONSERVATIVE else -scale.conservative_sign
    if side < 0:
        return EdgeScore(actual_bias <= low + EDGE_DECILE * span, max(0.0, low - actual_bias))
    return EdgeScore(actual_bias >= high - EDGE_DECILE * span, max(0.0, actual_bias - high))


@dataclass(frozen=True)
class TargetingRecord:
    """Post-hoc score of one newborn, filled in once its bias is measured."""
    request_id: str
    kind: PersonaOrigin
    target: float
    actual: float
    category: TargetingCategory
    error: float
    direction: Optional[str] = None
    reached_decile: Optional[bool] = None
    extension: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            "request_id": self.request_id,
            "kind": PersonaOrigin(self.kind).value,
            "target": self.target,
            "actual": self.actual,
            "category": TargetingCategory(self.category).value,
            "error": self.error,
            "direction": self.direction,
            "reached_decile": self.reached_decile,
            "extension": self.extension,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "TargetingRecord":
        return cls(
            request_id=data["request_id"],
            kind=PersonaOrigin(data["kind"]),
            target=float(data["target"]),
            actual=float(data["actual"]),
            category=TargetingCategory(data["category"]),
            error=float(data["error"]),
            direction=data.get("direction"),
            reached_decile=data.get("reached_decile"),
            extension=data.get("extension"),
        )


def score_newborn(request: GenerationRequest, actual: float,
                  scale: OrdinalScale = OrdinalScale()) -> TargetingRecord:
    score = score_targeting(request.target_bias, actual)
    reached = extension = None
    if request.kind is PersonaOrigin.EDGE_EXPAND and request.previous_range:
        low, high = request.previous_range
        if high > low:
            edge = score_edge_expansion(request.previous_range, request.direction, actual, scale)
            reached, extension = edge.reached_decile, edge.extension
    logger.debug(
        f"Targeting {request.request_id}: target {request.target_bias:.3f}, "
        f"actual {actual:.3f}, {score.category.value}"
    )
    return TargetingRecord(
        request_id=request.request_id, kind=request.kind, target=request.target_bias,
        actual=actual, category=score.category, error=score.error,
        direction=request.direction, reached_decile=reached, extension=extension,
    )


def summarize_targeting(records: Iterable[TargetingRecord]) -> Dict:
    """Aggregate targeting accuracy and edge-expansion success."""
    records = list(records)
    summary: Dict = {
        "n": len(records),
        "categories": {c.value: 0.0 for c in TargetingCategory},
        "mean_abs_error": None,
        "pearson_r": None,
        "edge_attempts": 0,
        "edge_reached_fraction": None,
        "mean_extension": None,
    }
    if not records:
        return summary
    counts = Counter(TargetingCategory(r.category).value for r in records)
    for category, count in counts.items():
        summary["categories"][category] = count / len(records)
    summary["mean_abs_error"] = float(np.mean([r.error for r in records]))

    targets = np.array([r.target for r in records])
    actuals = np.array([r.actual for r in records])
    if len(records) >= 3 and np.ptp(targets) > 0 and np.ptp(actuals) > 0:
        summary["pearson_r"] = float(stats.pearsonr(targets, actuals)[0])

    edges = [r for r in records if r.reached_decile is not None]
    summary["edge_attempts"] = len(edges)
    if edges:
        reached = [r for r in edges if r.reached_decile]
        summary["edge_reached_fraction"] = len(reached) / len(edges)
        if reached:
            summary["mean_extension"] = float(np.mean([r.extension for r in reached]))
    return summary
