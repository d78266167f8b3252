"""Deterministic synthetic rater oracle

Realizes the additive model as a generator:
    level = clamp(round(theta_i + u_j + (K+1)/2 + eps), 1, K)
with eps drawn from a counter-based stream keyed by (seed, case, persona,
sample), so results never depend on call order or thread count.
"""

import hashlib
import math
import threading
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .backends import RatingResult
from .core_model import Case, OrdinalScale, Persona, PersonaOrigin
from .errors import DomainError, RatingError

THETA_CENTERING_TOLERANCE = 1e-9


def stable_key(text: str) -> int:
    """64-bit key for a string, independent of PYTHONHASHSEED."""
    return int.from_bytes(hashlib.blake2b(text.encode('utf-8'), digest_size=8).digest(), 'big')


def _noise(seed: int, noise_sd: float, *keys: int) -> float:
    if noise_sd == 0:
        return 0.0
    rng = np.random.default_rng([seed, *keys])
    return float(rng.normal(0.0, noise_sd))


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def synthetic_level(scale: OrdinalScale, theta: float, u: float, noise: float = 0.0) -> int:
    raw = _round_half_up(theta + u + scale.baseline + noise)
    return min(max(raw, 1), scale.k_levels)


@dataclass(frozen=True)
class SyntheticRaterConfig:
    latent_theta: Mapping[str, float]
    latent_u: Mapping[str, float]
    noise_sd: float = 0.0
    seed: int = 0
    scale: OrdinalScale = field(default_factory=OrdinalScale)

    def __post_init__(self):
        if self.noise_sd < 0:
            raise DomainError(f"noise_sd={self.noise_sd} must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError(f"seed={self.seed} must be a non-negative 64-bit integer")
        total = math.fsum(self.latent_theta.values())
        if abs(total) > THETA_CENTERING_TOLERANCE:
            raise DomainError(f"latent_theta must be centered, sum is {total:.3e}")


def synthetic_rate(config: SyntheticRaterConfig, case_index: int, persona_index: int,
                   sample: int = 0) -> int:
    """Pure function of (config, indices, sample)."""
    case_id = list(config.latent_theta)[case_index]
    persona_id = list(config.latent_u)[persona_index]
    noise = _noise(config.seed, config.noise_sd, stable_key(case_id), stable_key(persona_id), sample)
    return synthetic_level(config.scale, config.latent_theta[case_id], config.latent_u[persona_id], noise)


class SyntheticPanel:
    """
    Latent world shared by the synthetic rater, generator and scorer.

    Newborn personas register their latent bias here when generated.
    """

    def __init__(self, scale: OrdinalScale, latent_theta: Mapping[str, float],
                 latent_u: Mapping[str, float], noise_sd: float = 0.0, seed: int = 0):
        # validates centering and ranges
        SyntheticRaterConfig(dict(latent_theta), dict(latent_u), noise_sd, seed, scale)
        self.scale = scale
        self.latent_theta: Dict[str, float] = dict(latent_theta)
        self.latent_u: Dict[str, float] = dict(latent_u)
        self.noise_sd = noise_sd
        self.seed = seed
        self._lock = threading.Lock()

    def register(self, persona_id: str, latent_u: float):
        with self._lock:
            self.latent_u[persona_id] = float(latent_u)

    def latent_bias(self, persona_id: str) -> Optional[float]:
        with self._lock:
            return self.latent_u.get(persona_id)

    def config(self) -> SyntheticRaterConfig:
        with self._lock:
            return SyntheticRaterConfig(
                dict(self.latent_theta), dict(self.latent_u), self.noise_sd, self.seed, self.scale
            )

    def to_dict(self) -> Dict:
        with self._lock:
            return {
                "scale": self.scale.to_dict(),
                "noise_sd": self.noise_sd,
                "seed": self.seed,
                "latent_theta": dict(self.latent_theta),
                "latent_u": dict(self.latent_u),
            }


class SyntheticRater:
    """RaterBackend over a SyntheticPanel."""

    deterministic = True
    supports_parallel = True

    def __init__(self, panel: SyntheticPanel):
        self.panel = panel
        self.backend_id = f"synthetic-rater:{panel.seed}:{panel.noise_sd!r}"

    def rate(self, persona: Persona, case: Case, scale: OrdinalScale,
             sample: int = 0) -> RatingResult:
        u = self.panel.latent_bias(persona.id)
        if u is None:
            raise RatingError(f"synthetic panel has no latent bias for persona {persona.id!r}")
        theta = self.panel.latent_theta.get(case.id)
        if theta is None:
            raise RatingError(f"synthetic panel has no latent difficulty for case {case.id!r}")
        noise = _noise(self.panel.seed, self.panel.noise_sd, stable_key(case.id), stable_key(persona.id), sample)
        level = synthetic_level(scale, theta, u, noise)
        rationale = f"Latent score {theta + u + scale.baseline + noise:.3f} mapped to level {level}."
        return RatingResult(level=level, rationale=rationale)


class SyntheticGenerator:
    """
    GeneratorBackend that realizes the requested target bias.

    Target biases are in fitted units (column means, so they include the
    scale baseline). The registered latent offset is target - baseline plus
    a perturbation from Normal(0, targeting_sd) keyed by (seed, request id).
    """

    def __init__(self, panel: SyntheticPanel, targeting_sd: float = 0.0, seed: int = 0):
        if targeting_sd < 0:
            raise DomainError(f"targeting_sd={targeting_sd} must be >= 0")
        self.panel = panel
        self.targeting_sd = targeting_sd
        self.seed = seed
        self.backend_id = f"synthetic-generator:{seed}:{targeting_sd!r}"

    def latent_for(self, request) -> float:
        return self._latent(request.request_id, request.target_bias)

    def _latent(self, persona_id: str, target_bias: float) -> float:
        noise = _noise(self.seed, self.targeting_sd, stable_key(persona_id))
        return target_bias - self.panel.scale.baseline + noise

    def generate_persona(self, request) -> str:
        latent = self.latent_for(request)
        self.panel.register(request.request_id, latent)
        kind = PersonaOrigin(request.kind).value.replace("_", " ")
        return (
            f"You are synthetic rater {request.request_id}, created by {kind} "
            f"toward bias {request.target_bias:.3f}. You weigh every case with a steady "
            f"offset of {latent:.3f} scale units."
        )

    def restore(self, personas) -> int:
        """Re-register generated personas after a resume; returns how many."""
        restored = 0
        for persona in personas:
            if persona.origin is PersonaOrigin.SEED or persona.target_bias is None:
                continue
            if self.panel.latent_bias(persona.id) is None:
                self.panel.register(persona.id, self._latent(persona.id, persona.target_bias))
                restored += 1
        return restored


class SyntheticCoherenceScorer:
    """
    Stub judge: fixed scores, optionally declining with |latent bias|.

    overrides pins (soundness, grounding) for chosen persona ids.
    """

    def __init__(self, panel: Optional[SyntheticPanel] = None, base: float = 3.0,
                 bias_slope: float = 0.0,
                 overrides: Optional[Mapping[str, Tuple[float, float]]] = None):
        if not 0.0 <= base <= 4.0:
            raise DomainError(f"coherence base={base} must lie in [0, 4]")
        self.panel = panel
        self.base = base
        self.bias_slope = bias_slope
        self.overrides = dict(overrides or {})
        self.backend_id = f"synthetic-judge:{base!r}:{bias_slope!r}"

    def score(self, persona: Persona, case: Case, rationale: str,
              level: Optional[int] = None) -> Tuple[float, float]:
        if persona.id in self.overrides:
            return self.overrides[persona.id]
        value = self.base
        if self.bias_slope and self.panel is not None:
            u = self.panel.latent_bias(persona.id) or 0.0
            value = self.base - self.bias_slope * abs(u)
        value = min(max(value, 0.0), 4.0)
        return value, value
