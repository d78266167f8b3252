"""Evolution loop: evaluate, select, generate, repeat

Each generation rates the whole pool on every case, refits the bias model
from scratch, runs the feasibility cascade, trims survivors beyond
target_pool_size and tops the pool back up to that size with gap-fill
and edge-expansion newborns. Newborns are evaluated (and their targeting
scored) in the following generation.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .backends import Backends, RatingResult
from .bias_model import BiasFit, fit_additive_bias_model
from .config import EvolutionConfig, TemplatesConfig
from .core_model import Case, Descriptors, OrdinalScale, Persona, RatingMatrix, cases_by_split
from .diversity import mean_ambiguous_entropy
from .errors import DomainError, ExtinctionError, RatingError, TransportError
from .generation import (
    GenerationRequest, TargetingRecord, find_pool_gaps, GapReport, newborn,
    plan_generation, render_request, score_newborn, summarize_targeting,
)
from .logging_setup import get_logger
from .prompts import PromptTemplates
from .run_store import (
    RunDirectory, persona_from_dict, persona_to_dict, read_json, read_personas,
    write_json, write_personas, write_ratings,
)
from .selection import Removal, SelectionReport, apply_constraints, safety_score
from .team import assemble_team

CELL_ERRORS = (RatingError, TransportError, DomainError)


@dataclass
class Evaluation:
    ratings: RatingMatrix                       # evaluable personas, all cases
    rationales: Dict[Tuple[str, str], str]
    fit: Optional[BiasFit]
    descriptors: Dict[str, Descriptors]
    unevaluable: Dict[str, Dict[str, float]]    # persona id -> failure metrics
    diversity: Optional[float]
    transport_failures: int = 0
    scored_cases: List[str] = field(default_factory=list)     # ambiguous cases in the fit and D
    dropped_cases: List[str] = field(default_factory=list)    # ambiguous cases nobody rated

    def evaluated(self, pool: Sequence[Persona]) -> List[Persona]:
        return [p.with_descriptors(self.descriptors[p.id]) for p in pool if p.id in self.descriptors]


def _run_cells(tasks, fn, parallelism: int, parallel: bool) -> Dict:
    """Run fn over keyed tasks; returns {key: result or exception}."""
    def call(item):
        key, args = item
        try:
            return key, fn(*args)
        except CELL_ERRORS as e:
            return key, e

    workers = parallelism if parallel else 1
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        return dict(executor.map(call, tasks))


def coherence_cases(ambiguous: Sequence[Case], sample: int, seed: int, generation: int) -> List[Case]:
    """All ambiguous cases, or a seeded subset of `sample` of them."""
    if sample <= 0 or sample >= len(ambiguous):
        return list(ambiguous)
    rng = np.random.default_rng([seed, generation])
    chosen = sorted(rng.choice(len(ambiguous), size=sample, replace=False).tolist())
    return [ambiguous[i] for i in chosen]


def evaluate_pool(pool: Sequence[Persona], cases: Sequence[Case], backends: Backends,
                  scale: OrdinalScale, config: EvolutionConfig, generation: int = 1) -> Evaluation:
    """
    Rate every (persona, case) pair and compute the four descriptors.

    A persona whose failed cells exceed config.failure_budget, or that
    ends up without safety ratings or judge scores, is unevaluable.
    Ambiguous cases no evaluable persona rated are left out of the bias fit
    and of D and reported as dropped_cases.
    """
    log = get_logger()
    ambiguous, unambiguous = cases_by_split(cases)
    if not ambiguous or not unambiguous:
        raise DomainError("evaluation needs both ambiguous and unambiguous cases")
    rater = backends.rater

    def rate(persona: Persona, case: Case) -> RatingResult:
        result = rater.rate(persona, case, scale, 0)
        scale.check_level(result.level)
        return result

    tasks = [((c.id, p.id), (p, c)) for p in pool for c in cases]
    results = _run_cells(tasks, rate, config.parallelism, getattr(rater, "supports_parallel", True))

    unevaluable: Dict[str, Dict[str, float]] = {}
    transport_failures = 0
    for p in pool:
        failed = [results[(c.id, p.id)] for c in cases if isinstance(results[(c.id, p.id)], Exception)]
        transport_failures += sum(isinstance(e, TransportError) for e in failed)
        share = len(failed) / len(cases)
        if share > config.failure_budget:
            unevaluable[p.id] = {"failed_cells": float(len(failed)), "failure_share": share}
            log.warning(f"Persona {p.id} unevaluable: {len(failed)}/{len(cases)} ratings failed ({failed[0]})")

    entries = {k: r.level for k, r in results.items() if isinstance(r, RatingResult)}
    rationales = {k: r.rationale for k, r in results.items() if isinstance(r, RatingResult)}

    # safety needs at least one rated unambiguous case
    for p in pool:
        if p.id not in unevaluable and not any((c.id, p.id) in entries for c in unambiguous):
            unevaluable[p.id] = {"failed_cells": float(len(unambiguous)), "failure_share": 1.0}
            log.warning(f"Persona {p.id} unevaluable: no safety ratings")

    judged_cases = coherence_cases(ambiguous, config.coherence_sample, config.seed, generation)
    candidates = [p for p in pool if p.id not in unevaluable]
    judge_tasks = [
        ((c.id, p.id), (p, c, rationales[(c.id, p.id)], entries[(c.id, p.id)]))
        for p in candidates for c in judged_cases if (c.id, p.id) in entries
    ]
    scores = _run_cells(judge_tasks, backends.scorer.score, config.parallelism, True)

    coherence: Dict[str, float] = {}
    for p in candidates:
        values = [
            (scores[(c.id, p.id)][0] + scores[(c.id, p.id)][1]) / 2.0
            for c in judged_cases
            if (c.id, p.id) in scores and not isinstance(scores[(c.id, p.id)], Exception)
        ]
        if not values:
            unevaluable[p.id] = {"failed_cells": 0.0, "failure_share": 0.0, "judge_failures": 1.0}
            log.warning(f"Persona {p.id} unevaluable: no coherence scores")
            continue
        coherence[p.id] = min(max(float(np.mean(values)), 0.0), 4.0)

    ambiguous_ids = [c.id for c in ambiguous]
    evaluable = [p.id for p in pool if p.id not in unevaluable]
    ratings = RatingMatrix.from_entries(entries, scale, [c.id for c in cases], evaluable)
    if not evaluable:
        return Evaluation(ratings, rationales, None, {}, unevaluable, None, transport_failures)

    dropped = [c for c in ambiguous_ids if not ratings.case_ratings(c)]
    scored = [c for c in ambiguous_ids if c not in set(dropped)]
    if dropped:
        log.warning(
            f"Generation {generation}: {len(dropped)} ambiguous case(s) without any rating "
            f"left out of the bias fit and D: {', '.join(dropped)}"
        )
    fit = fit_additive_bias_model(
        ratings.submatrix(cases=scored),
        tolerance=config.bias_tolerance, max_iterations=config.bias_max_iterations,
    )

    descriptors: Dict[str, Descriptors] = {}
    for pid in evaluable:
        descriptors[pid] = Descriptors(
            bias=fit.u[pid], variance=fit.s2[pid],
            safety=safety_score(ratings, pid, unambiguous), coherence=coherence[pid],
        )

    diversity = mean_ambiguous_entropy(ratings, scored, scale)
    return Evaluation(ratings, rationales, fit, descriptors, unevaluable, diversity, transport_failures,
                      scored, dropped)


@dataclass
class GenerationRecord:
    generation: int
    pool: List[str]
    diversity: float
    diversity_gain: Optional[float]
    bias_range: Tuple[float, float]
    selection: SelectionReport
    requests: List[GenerationRequest]
    newborns: List[Persona]
    generator_failures: List[Dict[str, str]]
    targeting: List[TargetingRecord]
    frozen_delta: Optional[float]
    plateau_count: int = 0
    terminal: bool = False
    early_stop: bool = False
    saturated: bool = False
    dropped_cases: List[str] = field(default_factory=list)

    @property
    def survivors(self) -> List[str]:
        return list(self.selection.survivors)

    def to_dict(self) -> Dict:
        return {
            "generation": self.generation,
            "pool": list(self.pool),
            "diversity": self.diversity,
            "diversity_gain": self.diversity_gain,
            "bias_range": list(self.bias_range),
            "selection": self.selection.to_dict(),
            "requests": [r.to_dict() for r in self.requests],
            "newborns": [persona_to_dict(p) for p in self.newborns],
            "generator_failures": list(self.generator_failures),
            "targeting": [t.to_dict() for t in self.targeting],
            "targeting_summary": summarize_targeting(self.targeting),
            "frozen_delta": self.frozen_delta,
            "plateau_count": self.plateau_count,
            "terminal": self.terminal,
            "early_stop": self.early_stop,
            "saturated": self.saturated,
            "dropped_cases": list(self.dropped_cases),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "GenerationRecord":
        return cls(
            generation=int(data["generation"]),
            pool=list(data["pool"]),
            diversity=float(data["diversity"]),
            diversity_gain=data.get("diversity_gain"),
            bias_range=tuple(data["bias_range"]),
            selection=SelectionReport.from_dict(data["selection"]),
            requests=[GenerationRequest.from_dict(r) for r in data["requests"]],
            newborns=[persona_from_dict(p) for p in data["newborns"]],
            generator_failures=list(data.get("generator_failures", [])),
            targeting=[TargetingRecord.from_dict(t) for t in data.get("targeting", [])],
            frozen_delta=data.get("frozen_delta"),
            plateau_count=int(data.get("plateau_count", 0)),
            terminal=bool(data.get("terminal", False)),
            early_stop=bool(data.get("early_stop", False)),
            saturated=bool(data.get("saturated", False)),
            dropped_cases=list(data.get("dropped_cases", [])),
        )


@dataclass
class EvolutionState:
    """Everything needed to run the next generation."""
    generation: int
    pool: List[Persona]
    frozen_delta: Optional[float] = None
    pending: Dict[str, GenerationRequest] = field(default_factory=dict)
    diversity_history: List[float] = field(default_factory=list)
    plateau_count: int = 0
    targeting: List[TargetingRecord] = field(default_factory=list)
    finished: bool = False
    final_pool: List[Persona] = field(default_factory=list)


def _generate(requests: Sequence[GenerationRequest], backends: Backends,
              parallelism: int) -> Tuple[List[Persona], List[Dict[str, str]]]:
    log = get_logger()

    def make(request: GenerationRequest) -> Persona:
        return newborn(request, backends.generator.generate_persona(request))

    results = _run_cells([(r.request_id, (r,)) for r in requests], make, parallelism, True)
    newborns, failures = [], []
    for r in requests:
        outcome = results[r.request_id]
        if isinstance(outcome, Exception):
            log.warning(f"Generation request {r.request_id} failed: {outcome}")
            failures.append({"request_id": r.request_id, "error": type(outcome).__name__, "message": str(outcome)})
        else:
            newborns.append(outcome)
    return newborns, failures


def trim_to_capacity(survivors: Sequence[Persona], capacity: int) -> Set[str]:
    """
    Ids of at most `capacity` survivors, chosen like a team so both bias
    extremes and the spread in between are kept.
    """
    if len(survivors) <= capacity:
        return {p.id for p in survivors}
    try:
        return set(assemble_team(survivors, capacity).ids)
    except DomainError:
        # every bias equal: no spread to keep
        return {p.id for p in sorted(survivors, key=lambda p: p.id)[:capacity]}


def survivor_diversity(evaluation: Evaluation, survivor_ids: Sequence[str],
                       scale: OrdinalScale) -> float:
    """D over the survivors, on the scored ambiguous cases they rated."""
    ratings = evaluation.ratings.submatrix(personas=survivor_ids)
    rated = [c for c in evaluation.scored_cases if ratings.case_ratings(c)]
    return mean_ambiguous_entropy(ratings, rated, scale)


def run_generation(state: EvolutionState, cases: Sequence[Case], backends: Backends,
                   scale: OrdinalScale, config: EvolutionConfig,
                   templates: PromptTemplates, template_config: TemplatesConfig = TemplatesConfig(),
                   run_dir: Optional[RunDirectory] = None) -> GenerationRecord:
    """
    One evaluate-select-generate cycle. Updates state in place.

    Raises:
        ExtinctionError: nothing survived evaluation and selection
        TransportError: every persona failed because the backend is unreachable
    """
    log = get_logger()
    g = state.generation
    if not state.pool:
        raise ExtinctionError(f"generation {g}: empty pool")
    log.info(f"Generation {g}: evaluating {len(state.pool)} personas on {len(cases)} cases")

    evaluation = evaluate_pool(state.pool, cases, backends, scale, config, g)
    evaluated = evaluation.evaluated(state.pool)
    if run_dir is not None:
        write_personas(run_dir.pool_path(g), evaluated)
        write_ratings(run_dir.ratings_path(g), evaluation.ratings.entries, evaluation.rationales)

    if not evaluated:
        if evaluation.transport_failures:
            raise TransportError(f"generation {g}: backend unreachable for every persona")
        raise ExtinctionError(f"generation {g}: no persona could be evaluated")

    targeting = [
        score_newborn(state.pending[p.id], p.bias, scale)
        for p in evaluated if p.id in state.pending
    ]
    state.targeting.extend(targeting)

    ids = [p.id for p in evaluated]
    d = evaluation.descriptors
    report = apply_constraints(
        ids,
        safety={i: d[i].safety for i in ids},
        coherence={i: d[i].coherence for i in ids},
        bias={i: d[i].bias for i in ids},
        s2={i: d[i].variance for i in ids},
        config=config.selection,
        generation=g,
        frozen_delta=state.frozen_delta,
    )
    report.removed[:0] = [Removal(pid, "evaluation", m) for pid, m in evaluation.unevaluable.items()]
    if state.frozen_delta is None and report.frozen_delta is not None:
        state.frozen_delta = report.frozen_delta
        if run_dir is not None:
            run_dir.write_frozen_delta(report.frozen_delta, report.delta_tightened, g)

    survivors = [p for p in evaluated if p.id in set(report.survivors)]
    if len(survivors) > config.target_pool_size:
        kept = trim_to_capacity(survivors, config.target_pool_size)
        trimmed = [p for p in survivors if p.id not in kept]
        survivors = [p for p in survivors if p.id in kept]
        report.survivors = [p.id for p in survivors]
        report.removed += [Removal(p.id, "capacity", {"bias": p.bias}) for p in trimmed]
        log.info(f"Generation {g}: {len(trimmed)} survivors over capacity {config.target_pool_size} trimmed")

    # D and the range describe the pool carried forward, not everyone evaluated
    diversity = survivor_diversity(evaluation, [p.id for p in survivors], scale)
    gain = diversity - state.diversity_history[-1] if state.diversity_history else None
    state.diversity_history.append(diversity)
    if gain is not None and gain < config.convergence.min_coverage_gain:
        state.plateau_count += 1
    else:
        state.plateau_count = 0
    early_stop = state.plateau_count >= config.convergence.patience and g < config.n_generations
    terminal = g >= config.n_generations or early_stop

    biases = [p.bias for p in survivors]
    bias_range = (min(biases), max(biases))
    log.info(
        f"Generation {g}: D={diversity:.4f}"
        + (f" (gain {gain:+.4f})" if gain is not None else "")
        + f", bias range [{bias_range[0]:.3f}, {bias_range[1]:.3f}], "
        f"{len(survivors)} survivors, {len(report.removed)} removed"
    )

    budget = max(0, config.target_pool_size - len(survivors))
    requests: List[GenerationRequest] = []
    newborns: List[Persona] = []
    failures: List[Dict[str, str]] = []
    if not terminal and budget > 0:
        ordered = sorted(survivors, key=lambda p: (p.bias, p.id))
        gaps = find_pool_gaps(ordered) if len(ordered) >= 2 else GapReport()
        low, high = ordered[0], ordered[-1]
        planned = plan_generation(
            gaps, (low.bias, high.bias), budget,
            gap_ratio=config.gap_filling_ratio, scale=scale,
            edge_references=((low.prompt_text, low.bias), (high.prompt_text, high.bias)),
            step_fraction=config.edge_step_fraction, step_floor=config.edge_step_floor,
            generation=g,
        )
        requests = [
            render_request(r, templates, template_config.gap_fill, template_config.edge_expand,
                           template_config.role, template_config.setting)
            for r in planned
        ]
        newborns, failures = _generate(requests, backends, config.parallelism)
        log.info(f"Generation {g}: {len(newborns)}/{len(requests)} newborns generated")
    elif budget == 0 and not terminal:
        log.info(f"Generation {g}: pool saturated, no newborns")
    if early_stop:
        log.warning(f"Generation {g}: diversity plateau for {state.plateau_count} generations, stopping early")

    record = GenerationRecord(
        generation=g,
        pool=[p.id for p in state.pool],
        diversity=diversity,
        diversity_gain=gain,
        bias_range=bias_range,
        selection=report,
        requests=requests,
        newborns=newborns,
        generator_failures=failures,
        targeting=targeting,
        frozen_delta=state.frozen_delta,
        plateau_count=state.plateau_count,
        terminal=terminal,
        early_stop=early_stop,
        saturated=budget == 0,
        dropped_cases=list(evaluation.dropped_cases),
    )

    state.pending = {r.request_id: r for r in requests}
    state.pool = survivors + newborns
    state.generation = g + 1
    state.finished = terminal
    if terminal:
        state.final_pool = survivors

    if run_dir is not None:
        write_json(run_dir.generation_path(g), record.to_dict())
        write_json(run_dir.targeting_path, {
            "records": [t.to_dict() for t in state.targeting],
            "summary": summarize_targeting(state.targeting),
        })
    return record


def run_evolution(initial_pool: Sequence[Persona], cases: Sequence[Case], backends: Backends,
                  scale: OrdinalScale, config: EvolutionConfig, templates: PromptTemplates,
                  template_config: TemplatesConfig = TemplatesConfig(),
                  run_dir: Optional[RunDirectory] = None,
                  state: Optional[EvolutionState] = None) -> List[GenerationRecord]:
    """
    Run generations until n_generations or a diversity plateau.

    Pass a state from resume_state to continue an interrupted run; records
    of already completed generations are not returned again.
    """
    log = get_logger()
    if state is None:
        if not initial_pool:
            raise DomainError("initial pool is empty")
        state = EvolutionState(generation=1, pool=list(initial_pool), frozen_delta=config.selection.cluster_delta)
    if run_dir is not None:
        run_dir.ensure()

    restore = getattr(backends.generator, "restore", None)
    if restore:
        restore(state.pool)

    records: List[GenerationRecord] = []
    while not state.finished:
        records.append(run_generation(state, cases, backends, scale, config, templates, template_config, run_dir))

    if records:
        last = records[-1]
        log.info(
            f"Evolution finished after generation {last.generation}: "
            f"{len(state.final_pool)} personas, D={last.diversity:.4f}"
            + (" (early stop)" if last.early_stop else "")
        )
    return records


def resume_state(run_dir: RunDirectory) -> EvolutionState:
    """Rebuild the state at the last completed generation boundary."""
    completed = run_dir.generations()
    if not completed:
        raise DomainError(f"{run_dir.root}: no completed generation to resume from")
    records = [GenerationRecord.from_dict(read_json(run_dir.generation_path(g))) for g in completed]
    last = records[-1]
    evaluated = {p.id: p for p in read_personas(run_dir.pool_path(last.generation))}
    survivors = [evaluated[pid] for pid in last.survivors]

    targeting: List[TargetingRecord] = []
    for record in records:
        targeting.extend(record.targeting)

    state = EvolutionState(
        generation=last.generation + 1,
        pool=survivors + list(last.newborns),
        frozen_delta=run_dir.read_frozen_delta(),
        pending={r.request_id: r for r in last.requests},
        diversity_history=[r.diversity for r in records],
        plateau_count=last.plateau_count,
        targeting=targeting,
        finished=last.terminal,
        final_pool=survivors if last.terminal else [],
    )
    return state


def final_pool(run_dir: RunDirectory) -> List[Persona]:
    """Survivors of the terminal (or latest) generation, with descriptors."""
    completed = run_dir.generations()
    if not completed:
        raise DomainError(f"{run_dir.root}: run has no generations")
    record = read_json(run_dir.generation_path(completed[-1]))
    survivors = set(record["selection"]["survivors"])
    return [p for p in read_personas(run_dir.pool_path(completed[-1])) if p.id in survivors]
