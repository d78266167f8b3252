"""Domain types and ordinal-scale semantics shared by every STEER module"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError


class TriageClass(str, Enum):
    OVERTRIAGE = "overtriage"
    EXACT = "exact"
    UNDERTRIAGE = "undertriage"


class CaseSplit(str, Enum):
    AMBIGUOUS = "ambiguous"
    UNAMBIGUOUS = "unambiguous"


class PersonaOrigin(str, Enum):
    SEED = "seed"
    GAP_FILL = "gap_fill"
    EDGE_EXPAND = "edge_expand"


@dataclass(frozen=True)
class OrdinalScale:
    """
    K-level ordinal decision space.

    most_urgent_level declares which numeric end is the conservative one
    (1 for ESI-style scales). The midpoint splits over- and undertriage.
    """
    k_levels: int = 5
    most_urgent_level: int = 1
    midpoint: Optional[int] = None

    def __post_init__(self):
        if self.k_levels < 2:
            raise DomainError(f"k_levels={self.k_levels} must be >= 2")
        if self.most_urgent_level not in (1, self.k_levels):
            raise DomainError(
                f"most_urgent_level={self.most_urgent_level} must be 1 or {self.k_levels}"
            )
        if self.midpoint is None:
            object.__setattr__(self, "midpoint", (self.k_levels + 1) // 2)
        if not 1 <= self.midpoint <= self.k_levels:
            raise DomainError(f"midpoint={self.midpoint} must lie in [1, {self.k_levels}]")

    @property
    def levels(self) -> range:
        return range(1, self.k_levels + 1)

    @property
    def baseline(self) -> float:
        """Mid-scale anchor (K+1)/2."""
        return (self.k_levels + 1) / 2.0

    @property
    def conservative_sign(self) -> int:
        """Sign of a bias that moves decisions toward the urgent end."""
        return -1 if self.most_urgent_level == 1 else 1

    def check_level(self, level) -> int:
        if isinstance(level, bool) or not isinstance(level, (int, np.integer)):
            raise DomainError(f"level {level!r} is not an integer")
        if not 1 <= level <= self.k_levels:
            raise DomainError(f"level {level} outside [1, {self.k_levels}]")
        return int(level)

    def conservativeness_rank(self, level: int) -> int:
        level = self.check_level(level)
        if self.most_urgent_level == 1:
            return self.k_levels - level
        return level - 1

    def level_for_rank(self, rank: int) -> int:
        if not 0 <= rank < self.k_levels:
            raise DomainError(f"rank {rank} outside [0, {self.k_levels - 1}]")
        if self.most_urgent_level == 1:
            return self.k_levels - rank
        return rank + 1

    def classify_triage(self, predicted: int) -> TriageClass:
        rank = self.conservativeness_rank(predicted)
        mid_rank = self.conservativeness_rank(self.midpoint)
        if rank > mid_rank:
            return TriageClass.OVERTRIAGE
        if rank < mid_rank:
            return TriageClass.UNDERTRIAGE
        return TriageClass.EXACT

    def to_dict(self) -> Dict:
        return {
            "k_levels": self.k_levels,
            "most_urgent_level": self.most_urgent_level,
            "midpoint": self.midpoint,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "OrdinalScale":
        return cls(
            k_levels=int(data["k_levels"]),
            most_urgent_level=int(data["most_urgent_level"]),
            midpoint=int(data["midpoint"]),
        )


def conservativeness_rank(scale: OrdinalScale, level: int) -> int:
    """Rank of a level, 0 = least conservative, K-1 = most_urgent_level."""
    return scale.conservativeness_rank(level)


def classify_triage(scale: OrdinalScale, predicted: int) -> TriageClass:
    """Classify a prediction against the scale midpoint."""
    return scale.classify_triage(predicted)


@dataclass(frozen=True)
class Case:
    id: str
    payload: str
    split: CaseSplit = CaseSplit.AMBIGUOUS
    ground_truth: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "split", CaseSplit(self.split))
        if self.split is CaseSplit.UNAMBIGUOUS and self.ground_truth is None:
            raise DomainError(f"unambiguous case {self.id!r} requires a ground_truth")
        if self.split is CaseSplit.AMBIGUOUS and self.ground_truth is not None:
            raise DomainError(f"ambiguous case {self.id!r} must not carry a ground_truth")

    @property
    def is_ambiguous(self) -> bool:
        return self.split is CaseSplit.AMBIGUOUS

    def validate(self, scale: OrdinalScale) -> "Case":
        if self.ground_truth is not None:
            scale.check_level(self.ground_truth)
        return self


@dataclass(frozen=True)
class Descriptors:
    """Behavioral descriptors measured during evaluation."""
    bias: float
    variance: float
    safety: float
    coherence: float

    def __post_init__(self):
        if self.variance < 0:
            raise DomainError(f"variance={self.variance} must be >= 0")
        if not 0.0 <= self.safety <= 1.0:
            raise DomainError(f"safety={self.safety} must lie in [0, 1]")
        if not 0.0 <= self.coherence <= 4.0:
            raise DomainError(f"coherence={self.coherence} must lie in [0, 4]")


@dataclass(frozen=True)
class Persona:
    id: str
    prompt_text: str
    origin: PersonaOrigin = PersonaOrigin.SEED
    target_bias: Optional[float] = None
    descriptors: Optional[Descriptors] = None
    generation_born: int = 0

    def __post_init__(self):
        object.__setattr__(self, "origin", PersonaOrigin(self.origin))
        if self.origin is not PersonaOrigin.SEED and self.target_bias is None:
            raise DomainError(f"persona {self.id!r} of origin {self.origin.value} needs a target_bias")

    @property
    def bias(self) -> Optional[float]:
        return self.descriptors.bias if self.descriptors else None

    def with_descriptors(self, descriptors: Optional[Descriptors]) -> "Persona":
        return replace(self, descriptors=descriptors)


def cases_by_split(cases: Iterable[Case]) -> Tuple[List[Case], List[Case]]:
    """Return (ambiguous, unambiguous) preserving input order."""
    ambiguous, unambiguous = [], []
    for case in cases:
        (ambiguous if case.is_ambiguous else unambiguous).append(case)
    return ambiguous, unambiguous


@dataclass(frozen=True)
class RatingMatrix:
    """
    Observed ordinal decisions over cases x personas.

    entries maps (case_id, persona_id) to a level; pairs may be missing.
    """
    cases: Tuple[str, ...]
    personas: Tuple[str, ...]
    entries: Mapping[Tuple[str, str], int] = field(default_factory=dict)

    @classmethod
    def from_entries(cls, entries: Mapping[Tuple[str, str], int],
                     scale: Optional[OrdinalScale] = None,
                     cases: Optional[Sequence[str]] = None,
                     personas: Optional[Sequence[str]] = None) -> "RatingMatrix":
        if cases is None:
            cases = sorted({c for c, _ in entries})
        if personas is None:
            personas = sorted({p for _, p in entries})
        case_set, persona_set = set(cases), set(personas)
        clean: Dict[Tuple[str, str], int] = {}
        for (case_id, persona_id), level in entries.items():
            if case_id not in case_set or persona_id not in persona_set:
                continue
            if scale is not None:
                level = scale.check_level(level)
            elif isinstance(level, bool) or not isinstance(level, (int, np.integer)):
                raise DomainError(f"level {level!r} for ({case_id}, {persona_id}) is not an integer")
            clean[(case_id, persona_id)] = int(level)
        return cls(tuple(cases), tuple(personas), clean)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, case_id: str, persona_id: str) -> Optional[int]:
        return self.entries.get((case_id, persona_id))

    def case_ratings(self, case_id: str) -> List[int]:
        return [self.entries[(case_id, p)] for p in self.personas if (case_id, p) in self.entries]

    def persona_ratings(self, persona_id: str) -> Dict[str, int]:
        return {c: self.entries[(c, persona_id)] for c in self.cases if (c, persona_id) in self.entries}

    def submatrix(self, cases: Optional[Sequence[str]] = None,
                  personas: Optional[Sequence[str]] = None) -> "RatingMatrix":
        return RatingMatrix.from_entries(
            self.entries,
            cases=list(self.cases) if cases is None else list(cases),
            personas=list(self.personas) if personas is None else list(personas),
        )

    def to_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Dense (values, mask) arrays of shape (n_cases, n_personas)."""
        values = np.zeros((len(self.cases), len(self.personas)), dtype=float)
        mask = np.zeros_like(values, dtype=bool)
        case_index = {c: i for i, c in enumerate(self.cases)}
        persona_index = {p: j for j, p in enumerate(self.personas)}
        for (case_id, persona_id), level in self.entries.items():
            i, j = case_index[case_id], persona_index[persona_id]
            values[i, j] = level
            mask[i, j] = True
        return values, mask
