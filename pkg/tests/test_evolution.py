"""Evolution loop end to end on the synthetic backend.

Every test builds a fresh simulated world: the generator registers newborn
latents on the shared panel, so worlds are never reused across runs.

Run:
  PYTHONPATH=. python tests/test_evolution.py   (or: pytest tests/)
"""
import os
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pytest

from steer.backends import Backends
from steer.config import ConvergenceConfig, EvolutionConfig
from steer.core_model import OrdinalScale, PersonaOrigin, cases_by_split
from steer.errors import DomainError, ExtinctionError, RatingError, TransportError
from steer.evolution import (
    EvolutionState, evaluate_pool, final_pool, resume_state, run_evolution, run_generation,
)
from steer.metrics import build_curve, ordinal_auc
from steer.prompts import PromptTemplates
from steer.run_store import RunDirectory, read_personas
from steer.simulation import simulate_dataset
from steer.synthetic_backend import SyntheticCoherenceScorer, SyntheticGenerator, SyntheticRater
from steer.team import assemble_team

SCALE = OrdinalScale()
CONFIG = EvolutionConfig(n_generations=3, target_pool_size=20, parallelism=4)


class _FlakyRater:
    """SyntheticRater that fails for chosen personas or (case, persona) cells."""

    deterministic = True
    supports_parallel = True

    def __init__(self, inner, broken=(), cells=(), error=RatingError):
        self.inner = inner
        self.backend_id = "flaky:" + inner.backend_id
        self.broken = set(broken)
        self.cells = set(cells)
        self.error = error

    def rate(self, persona, case, scale, sample=0):
        if persona.id in self.broken or (case.id, persona.id) in self.cells:
            raise self.error(f"no rating for {persona.id} on {case.id}")
        return self.inner.rate(persona, case, scale, sample)


def _world(seed=7):
    data = simulate_dataset(n_cases=30, n_personas=8, seed=seed)
    backends = Backends(
        SyntheticRater(data.panel),
        SyntheticGenerator(data.panel, 0.0, seed),
        SyntheticCoherenceScorer(data.panel),
    )
    return data, backends


def _evolve(root, config=CONFIG):
    data, backends = _world()
    run_dir = RunDirectory(root)
    records = run_evolution(data.personas, data.cases, backends, SCALE, config, PromptTemplates(),
                            run_dir=run_dir)
    return records, run_dir


def _snapshot(root):
    return {p.name: p.read_bytes() for p in sorted(Path(root).iterdir())}


def test_three_generations_fill_the_run_directory():
    with tempfile.TemporaryDirectory() as tmp:
        records, run_dir = _evolve(tmp)
        assert [r.generation for r in records] == [1, 2, 3]
        assert [r.terminal for r in records] == [False, False, True]
        assert run_dir.generations() == [1, 2, 3]
        for name in ("frozen_delta.json", "targeting.json", "pool_3.jsonl", "ratings_1.jsonl"):
            assert (Path(tmp) / name).exists(), name

        first = records[0]
        assert len(first.pool) == 8
        assert len(first.requests) == CONFIG.target_pool_size - len(first.survivors)
        assert [p.id for p in first.newborns] == [r.request_id for r in first.requests]
        assert {p.origin for p in first.newborns} == {PersonaOrigin.GAP_FILL, PersonaOrigin.EDGE_EXPAND}
        assert len(records[1].pool) == len(first.survivors) + len(first.newborns)
        assert len(records[1].targeting) == len(first.newborns)
        assert records[-1].requests == []

        survivors = final_pool(run_dir)
        assert [p.id for p in survivors] == records[-1].survivors
        assert all(p.descriptors is not None for p in survivors)


def test_edge_expansion_widens_the_spectrum():
    with tempfile.TemporaryDirectory() as tmp:
        records, _ = _evolve(tmp)
        first_low, first_high = records[0].bias_range
        low, high = records[1].bias_range
        assert low < first_low and high > first_high


def test_diversity_does_not_fall():
    with tempfile.TemporaryDirectory() as tmp:
        records, _ = _evolve(tmp)
        diversity = [r.diversity for r in records]
        assert all(b >= a - 0.02 for a, b in zip(diversity, diversity[1:])), diversity


def test_reruns_are_byte_identical():
    with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
        _evolve(first)
        _evolve(second)
        assert _snapshot(first) == _snapshot(second)


def test_resume_matches_an_uninterrupted_run():
    with tempfile.TemporaryDirectory() as full, tempfile.TemporaryDirectory() as interrupted:
        _evolve(full)

        data, backends = _world()
        run_dir = RunDirectory(interrupted).ensure()
        state = EvolutionState(generation=1, pool=list(data.personas))
        run_generation(state, data.cases, backends, SCALE, CONFIG, PromptTemplates(), run_dir=run_dir)

        data, backends = _world()   # fresh process: newborn latents must be restored
        state = resume_state(run_dir)
        assert state.generation == 2 and not state.finished
        records = run_evolution([], data.cases, backends, SCALE, CONFIG, PromptTemplates(),
                                run_dir=run_dir, state=state)
        assert [r.generation for r in records] == [2, 3]
        assert _snapshot(full) == _snapshot(interrupted)


def test_resume_needs_a_completed_generation():
    with tempfile.TemporaryDirectory() as tmp:
        with pytest.raises(DomainError):
            resume_state(RunDirectory(tmp))
        with pytest.raises(DomainError):
            final_pool(RunDirectory(tmp))


def test_saturated_pool_gets_no_newborns():
    config = EvolutionConfig(n_generations=2, target_pool_size=2, parallelism=4)
    with tempfile.TemporaryDirectory() as tmp:
        records, _ = _evolve(tmp, config)
        assert records[0].saturated and records[0].requests == []
        assert len(records[0].survivors) == 2
        assert records[1].pool == records[0].survivors


def test_pool_never_exceeds_capacity():
    config = EvolutionConfig(n_generations=3, target_pool_size=5, parallelism=4)
    with tempfile.TemporaryDirectory() as tmp:
        records, run_dir = _evolve(tmp, config)
        first = records[0]
        assert len(first.pool) == 8 and len(first.survivors) == 5
        trimmed = first.selection.removed_ids("capacity")
        assert trimmed and not set(trimmed) & set(first.survivors)
        assert all(len(r.survivors) <= 5 for r in records)
        assert all(len(r.pool) <= 5 for r in records[1:])
        # the trim keeps both ends of the survivors' spectrum
        pool = {p.id: p for p in read_personas(run_dir.pool_path(1))}
        kept = [pool[i].bias for i in first.survivors]
        assert first.bias_range == (min(kept), max(kept))
        passed = [pool[i].bias for i in first.survivors + trimmed]
        assert (min(kept), max(kept)) == (min(passed), max(passed))



def test_plateau_stops_early():
    config = EvolutionConfig(
        n_generations=5, target_pool_size=20, parallelism=4,
        convergence=ConvergenceConfig(min_coverage_gain=10.0, patience=1),
    )
    with tempfile.TemporaryDirectory() as tmp:
        records, _ = _evolve(tmp, config)
        assert [r.generation for r in records] == [1, 2]
        assert records[-1].early_stop and records[-1].terminal
        assert records[-1].plateau_count == 1


def test_failed_persona_is_unevaluable():
    data, backends = _world()
    backends.rater = _FlakyRater(backends.rater, broken={"seed-01"})
    evaluation = evaluate_pool(data.personas, data.cases, backends, SCALE, CONFIG)
    assert set(evaluation.unevaluable) == {"seed-01"}
    assert evaluation.unevaluable["seed-01"]["failure_share"] == 1.0
    assert "seed-01" not in evaluation.descriptors
    assert len(evaluation.evaluated(data.personas)) == 7


def test_failures_within_budget_are_tolerated():
    data, backends = _world()
    ambiguous, _ = cases_by_split(data.cases)
    cell = (ambiguous[0].id, "seed-02")
    backends.rater = _FlakyRater(backends.rater, cells={cell})
    evaluation = evaluate_pool(data.personas, data.cases, backends, SCALE, CONFIG)
    assert evaluation.unevaluable == {}
    assert evaluation.ratings.get(*cell) is None
    assert "seed-02" in evaluation.descriptors


def test_total_failure_raises():
    data, backends = _world()
    personas = data.personas
    backends.rater = _FlakyRater(backends.rater, broken={p.id for p in personas}, error=TransportError)
    with pytest.raises(TransportError):
        run_generation(EvolutionState(1, list(personas)), data.cases, backends, SCALE, CONFIG, PromptTemplates())
    backends.rater.error = RatingError
    with pytest.raises(ExtinctionError):
        run_generation(EvolutionState(1, list(personas)), data.cases, backends, SCALE, CONFIG, PromptTemplates())


def test_case_nobody_rated_is_dropped():
    data, backends = _world()
    ambiguous, _ = cases_by_split(data.cases)
    lost = ambiguous[0].id
    backends.rater = _FlakyRater(backends.rater, cells={(lost, p.id) for p in data.personas})
    evaluation = evaluate_pool(data.personas, data.cases, backends, SCALE, CONFIG)
    assert evaluation.dropped_cases == [lost]
    assert lost not in evaluation.scored_cases
    assert len(evaluation.scored_cases) == len(ambiguous) - 1
    assert evaluation.unevaluable == {} and len(evaluation.descriptors) == 8
    assert 0.0 <= evaluation.diversity <= 1.0

    record = run_generation(EvolutionState(1, list(data.personas)), data.cases, backends, SCALE,
                            CONFIG, PromptTemplates())
    assert record.dropped_cases == [lost]
    assert record.to_dict()["dropped_cases"] == [lost]


def test_full_scale_run_keeps_diversity_range_and_team_quality():
    data = simulate_dataset(n_cases=50, n_personas=8, seed=7)
    backends = Backends(
        SyntheticRater(data.panel),
        SyntheticGenerator(data.panel, 0.0, 7),
        SyntheticCoherenceScorer(data.panel),
    )
    config = EvolutionConfig(n_generations=5, target_pool_size=75, parallelism=8)
    state = EvolutionState(generation=1, pool=list(data.personas))
    records = run_evolution([], data.cases, backends, SCALE, config, PromptTemplates(), state=state)
    assert len(records) >= 3 and records[-1].terminal
    assert all(len(r.survivors) <= 75 for r in records)

    diversity = [r.diversity for r in records]
    assert all(b >= a - 0.02 for a, b in zip(diversity, diversity[1:])), diversity
    for before, after in zip(records, records[1:]):
        assert after.bias_range[0] <= before.bias_range[0] + 1e-6
        assert after.bias_range[1] >= before.bias_range[1] - 1e-6

    ambiguous, _ = cases_by_split(data.cases)
    pool_curve, _ = build_curve(state.final_pool, ambiguous, backends.rater, SCALE)
    team = assemble_team(state.final_pool, 10)
    team_curve, _ = build_curve(list(team.members), ambiguous, backends.rater, SCALE)
    assert ordinal_auc(team_curve) >= 0.9 * ordinal_auc(pool_curve)


def test_evaluation_needs_both_splits():
    data, backends = _world()
    ambiguous, _ = cases_by_split(data.cases)
    with pytest.raises(DomainError):
        evaluate_pool(data.personas, ambiguous, backends, SCALE, CONFIG)


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"  ok {name}")
    print("evolution tests passed")
