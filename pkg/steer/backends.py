"""Backend interfaces: raters, persona generators and coherence scorers"""

from dataclasses import dataclass
from typing import Optional, Protocol, Tuple, runtime_checkable

from .core_model import Case, OrdinalScale, Persona


@dataclass(frozen=True)
class RatingResult:
    level: int
    rationale: str = ""


@runtime_checkable
class RaterBackend(Protocol):
    """Source of ordinal ratings. Must be safe for concurrent rate() calls."""
    backend_id: str
    deterministic: bool
    supports_parallel: bool

    def rate(self, persona: Persona, case: Case, scale: OrdinalScale,
             sample: int = 0) -> RatingResult:
        """Return a level in [1, K] or raise; never a silent default."""
        ...


@runtime_checkable
class GeneratorBackend(Protocol):
    backend_id: str

    def generate_persona(self, request) -> str:
        """Persona prompt text for a GenerationRequest; never empty."""
        ...


@runtime_checkable
class CoherenceScorer(Protocol):
    backend_id: str

    def score(self, persona: Persona, case: Case, rationale: str,
              level: Optional[int] = None) -> Tuple[float, float]:
        """(soundness, grounding), each in [0, 4]."""
        ...


@dataclass
class Backends:
    """The three pluggable backends one run needs."""
    rater: RaterBackend
    generator: GeneratorBackend
    scorer: CoherenceScorer

    def close(self):
        for backend in (self.rater, self.generator, self.scorer):
            close = getattr(backend, "close", None)
            if close:
                close()
