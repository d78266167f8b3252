"""Champion team assembly by bias-spectrum coverage

The most conservative and the most lenient personas anchor the team; the
interval between them is cut into n-2 equal buckets, each filled with its
best-quality member.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .core_model import Persona
from .errors import DomainError
from .run_store import persona_from_dict, persona_to_dict

QUALITY_DECIMALS = 2


@dataclass(frozen=True)
class BucketAssignment:
    index: int
    low: float
    high: float
    persona_id: str
    filled_from_bucket: bool   # False when the bucket was empty and borrowed a neighbor

    @property
    def center(self) -> float:
        return (self.low + self.high) / 2.0

    def to_dict(self) -> Dict:
        return {
            "index": self.index,
            "low": self.low,
            "high": self.high,
            "persona_id": self.persona_id,
            "filled_from_bucket": self.filled_from_bucket,
        }


@dataclass(frozen=True)
class Team:
    members: Tuple[Persona, ...]
    provenance: Tuple[BucketAssignment, ...] = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def ids(self) -> List[str]:
        return [p.id for p in self.members]

    @property
    def biases(self) -> List[float]:
        return [p.bias for p in self.members]


def _quality_key(p: Persona) -> Tuple[float, float, float]:
    d = p.descriptors
    return (-round(d.safety, QUALITY_DECIMALS), -round(d.coherence, QUALITY_DECIMALS), d.variance)


def _bucket_pick(candidates: Sequence[Persona], center: float) -> Persona:
    return min(candidates, key=lambda p: (*_quality_key(p), abs(p.bias - center), p.id))


def _nearest_pick(candidates: Sequence[Persona], center: float) -> Persona:
    # distances equal at two decimals compete on quality
    return min(candidates, key=lambda p: (round(abs(p.bias - center), QUALITY_DECIMALS),
                                          *_quality_key(p), p.id))


def assemble_team(pool: Sequence[Persona], n: int) -> Team:
    """
    Coverage-based team of n distinct personas, sorted by bias.

    Within a bucket the pick maximizes (safety, coherence) rounded to two
    decimals, then minimizes variance, distance to the bucket center and id.
    Buckets left empty take the unselected persona nearest their center;
    candidates equally near at two decimals are ranked by the same quality
    key, then id.

    Raises:
        DomainError: n < 2, pool smaller than n, missing descriptors or a
            pool whose biases are all equal
    """
    if n < 2:
        raise DomainError(f"team size {n} must be >= 2")
    if len(pool) < n:
        raise DomainError(f"pool of {len(pool)} personas cannot fill a team of {n}")
    if len({p.id for p in pool}) != len(pool):
        raise DomainError("pool contains duplicate persona ids")
    missing = [p.id for p in pool if p.descriptors is None]
    if missing:
        raise DomainError(f"persona {missing[0]!r} has no descriptors")

    low_anchor = min(pool, key=lambda p: (p.bias, p.id))
    high_anchor = min(pool, key=lambda p: (-p.bias, p.id))
    lo, hi = low_anchor.bias, high_anchor.bias
    if hi <= lo:
        raise DomainError(
            "all personas share one bias; reduce the team size or accept members "
            "that differ only by id"
        )

    selected: Dict[str, Persona] = {low_anchor.id: low_anchor, high_anchor.id: high_anchor}
    n_buckets = n - 2
    provenance: List[BucketAssignment] = []
    if n_buckets:
        width = (hi - lo) / n_buckets
        bounds = [(lo + i * width, hi if i == n_buckets - 1 else lo + (i + 1) * width)
                  for i in range(n_buckets)]
        interior = [p for p in pool if p.id not in selected]
        members: Dict[int, List[Persona]] = {i: [] for i in range(n_buckets)}
        for p in interior:
            for i, (b_lo, b_hi) in enumerate(bounds):
                last = i == n_buckets - 1
                if b_lo <= p.bias < b_hi or (last and b_lo <= p.bias <= b_hi):
                    members[i].append(p)
                    break

        picks: Dict[int, BucketAssignment] = {}
        for i, (b_lo, b_hi) in enumerate(bounds):
            if members[i]:
                pick = _bucket_pick(members[i], (b_lo + b_hi) / 2.0)
                selected[pick.id] = pick
                picks[i] = BucketAssignment(i, b_lo, b_hi, pick.id, True)
        for i, (b_lo, b_hi) in enumerate(bounds):
            if i in picks:
                continue
            remaining = [p for p in pool if p.id not in selected]
            pick = _nearest_pick(remaining, (b_lo + b_hi) / 2.0)
            selected[pick.id] = pick
            picks[i] = BucketAssignment(i, b_lo, b_hi, pick.id, False)
        provenance = [picks[i] for i in range(n_buckets)]

    ordered = sorted(selected.values(), key=lambda p: (p.bias, p.id))
    return Team(members=tuple(ordered), provenance=tuple(provenance))


def max_center_distance(team: Team) -> Optional[float]:
    """Largest |bias - bucket center| over the filled buckets (None for n=2)."""
    by_id = {p.id: p for p in team.members}
    distances = [abs(by_id[b.persona_id].bias - b.center) for b in team.provenance]
    return max(distances) if distances else None


def team_to_dict(team: Team, scale_dict: Optional[Dict] = None) -> Dict:
    return {
        "n": team.n,
        "scale": scale_dict,
        "members": [persona_to_dict(p) for p in team.members],
        "provenance": [b.to_dict() for b in team.provenance],
    }


def team_from_dict(data: Dict) -> Team:
    members = tuple(persona_from_dict(m, "team member") for m in data["members"])
    if not members:
        raise DomainError("team has no members")
    if any(p.descriptors is None for p in members):
        raise DomainError("team members must carry descriptors")
    provenance = tuple(
        BucketAssignment(int(b["index"]), float(b["low"]), float(b["high"]),
                         b["persona_id"], bool(b["filled_from_bucket"]))
        for b in data.get("provenance", [])
    )
    return Team(members=tuple(sorted(members, key=lambda p: (p.bias, p.id))), provenance=provenance)
