"""Synthetic rater, generator and judge: formula values and determinism.

Run:
  PYTHONPATH=. python tests/test_synthetic_backend.py   (or: pytest tests/)
"""
import os
import random
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pytest

from steer.core_model import Case, OrdinalScale, Persona, PersonaOrigin
from steer.errors import DomainError, RatingError
from steer.generation import GenerationRequest
from steer.synthetic_backend import (
    SyntheticCoherenceScorer, SyntheticGenerator, SyntheticPanel, SyntheticRater,
    SyntheticRaterConfig, synthetic_level, synthetic_rate,
)

SCALE = OrdinalScale(5, 1)


def _panel(noise_sd=0.0, seed=1):
    theta = {"c1": -0.4, "c2": 0.0, "c3": 0.4}
    latent = {"p1": -1.0, "p2": 0.0, "p3": 1.0}
    return SyntheticPanel(SCALE, theta, latent, noise_sd, seed)


def _edge_request(request_id="g01-edge-000", target=2.0):
    return GenerationRequest(
        request_id=request_id, kind=PersonaOrigin.EDGE_EXPAND, target_bias=target,
        references=(("ref", 2.6),), direction="conservative",
    )


def test_synthetic_level_formula():
    assert synthetic_level(SCALE, 0.0, 0.0) == 3
    assert synthetic_level(SCALE, 0.6, -1.2) == 2
    assert synthetic_level(SCALE, 3.0, 3.0) == 5
    assert synthetic_level(SCALE, -3.0, -3.0) == 1


def test_config_requires_centered_theta():
    with pytest.raises(DomainError):
        SyntheticRaterConfig({"c1": 0.5, "c2": 0.0}, {"p": 0.0})
    with pytest.raises(DomainError):
        SyntheticRaterConfig({"c1": 0.0}, {"p": 0.0}, noise_sd=-1.0)


def test_synthetic_rate_is_order_independent():
    theta = {f"c{i}": (i - 4.5) / 5 for i in range(10)}
    latent = {f"p{j}": (j - 2) * 0.3 for j in range(5)}
    config = SyntheticRaterConfig(theta, latent, noise_sd=0.7, seed=99, scale=SCALE)
    cells = [(i, j) for i in range(10) for j in range(5)]
    reference = {cell: synthetic_rate(config, *cell) for cell in cells}
    rng = random.Random(5)
    for _ in range(20):
        rng.shuffle(cells)
        assert {cell: synthetic_rate(config, *cell) for cell in cells} == reference


def test_rater_matches_formula_and_fails_loudly():
    panel = _panel()
    rater = SyntheticRater(panel)
    result = rater.rate(Persona("p1", "x"), Case("c3", "y"), SCALE)
    assert result.level == synthetic_level(SCALE, 0.4, -1.0)
    assert result.rationale
    with pytest.raises(RatingError):
        rater.rate(Persona("nobody", "x"), Case("c1", "y"), SCALE)
    with pytest.raises(RatingError):
        rater.rate(Persona("p1", "x"), Case("unknown", "y"), SCALE)


def test_samples_draw_distinct_noise():
    rater = SyntheticRater(_panel(noise_sd=1.0, seed=3))
    persona, case = Persona("p2", "x"), Case("c2", "y")
    levels = {rater.rate(persona, case, SCALE, sample).level for sample in range(40)}
    assert len(levels) > 1
    assert rater.rate(persona, case, SCALE, 7) == rater.rate(persona, case, SCALE, 7)


def test_exact_generator_registers_target_offset():
    panel = _panel()
    generator = SyntheticGenerator(panel, targeting_sd=0.0, seed=1)
    text = generator.generate_persona(_edge_request(target=2.5))
    assert text.startswith("You are")
    # target is in fitted units; the latent offset drops the mid-scale anchor
    assert panel.latent_bias("g01-edge-000") == pytest.approx(2.5 - SCALE.baseline)


def test_generator_perturbation_is_seeded():
    results = []
    for _ in range(2):
        panel = _panel()
        generator = SyntheticGenerator(panel, targeting_sd=0.155, seed=42)
        generator.generate_persona(_edge_request(target=2.5))
        results.append(panel.latent_bias("g01-edge-000"))
    assert results[0] == results[1]
    assert abs(results[0] - (2.5 - SCALE.baseline)) < 0.5


def test_restore_reproduces_generated_latents():
    panel = _panel()
    generator = SyntheticGenerator(panel, targeting_sd=0.2, seed=8)
    request = _edge_request("g02-edge-003", target=1.7)
    generator.generate_persona(request)
    original = panel.latent_bias("g02-edge-003")

    fresh = _panel()
    restored = SyntheticGenerator(fresh, targeting_sd=0.2, seed=8).restore([
        Persona("g02-edge-003", "text", PersonaOrigin.EDGE_EXPAND, target_bias=1.7),
        Persona("p1", "seed persona"),
    ])
    assert restored == 1
    assert fresh.latent_bias("g02-edge-003") == original
    assert fresh.latent_bias("p1") == -1.0


def test_coherence_scorer_modes():
    panel = _panel()
    persona, case = Persona("p3", "x"), Case("c1", "y")
    assert SyntheticCoherenceScorer().score(persona, case, "r") == (3.0, 3.0)
    sloped = SyntheticCoherenceScorer(panel, base=3.5, bias_slope=1.0)
    assert sloped.score(persona, case, "r") == (2.5, 2.5)
    pinned = SyntheticCoherenceScorer(overrides={"p3": (1.0, 0.5)})
    assert pinned.score(persona, case, "r") == (1.0, 0.5)
    with pytest.raises(DomainError):
        SyntheticCoherenceScorer(base=5.0)


def test_panel_round_trips_to_dict():
    panel = _panel(noise_sd=0.3, seed=4)
    data = panel.to_dict()
    assert data["scale"] == SCALE.to_dict()
    assert data["latent_u"] == {"p1": -1.0, "p2": 0.0, "p3": 1.0}
    assert data["noise_sd"] == 0.3 and data["seed"] == 4


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"  ok {name}")
    print("synthetic-backend tests passed")
