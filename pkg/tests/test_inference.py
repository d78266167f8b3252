"""Percentile dial: rank index, endpoints, monotonicity and collection.

Run:
  PYTHONPATH=. python tests/test_inference.py   (or: pytest tests/)
"""
import os
import sys
from itertools import combinations_with_replacement, permutations

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pytest

from steer.core_model import Case, Descriptors, OrdinalScale, Persona
from steer.errors import DomainError
from steer.inference import (
    EnsembleOutput, MemberOutput, collect_outputs, percentile_select, sweep_percentiles,
)
from steer.metrics import sampling_baseline
from steer.synthetic_backend import SyntheticPanel, SyntheticRater

ESI = OrdinalScale(5, 1)


def _ensemble(levels, scale=ESI, case_id="c"):
    outputs = tuple(MemberOutput(f"m{i}", level, bias=i * 0.1) for i, level in enumerate(levels))
    return EnsembleOutput(case_id, outputs, scale)


def test_rank_index_for_ten_members():
    selection = percentile_select(_ensemble([5, 5, 4, 4, 3, 3, 2, 2, 1, 1]), 50)
    assert selection.rank == 4
    assert selection.level == 3


def test_endpoints():
    out = _ensemble([3, 2, 4, 1])
    assert percentile_select(out, 0).level == 4
    assert percentile_select(out, 100).level == 1
    assert percentile_select(out, 50).level == 3
    care = _ensemble([3, 2, 4, 1], OrdinalScale(5, 5))
    assert percentile_select(care, 100).level == 4
    assert percentile_select(care, 0).level == 1


def test_single_member_ignores_the_dial():
    out = _ensemble([2])
    assert {percentile_select(out, p).level for p in range(101)} == {2}


def test_dial_is_monotone():
    for scale in (ESI, OrdinalScale(5, 5)):
        for n in range(1, 7):
            for levels in combinations_with_replacement(scale.levels, n):
                out = _ensemble(levels, scale)
                ranks = [scale.conservativeness_rank(level) for _, level in sweep_percentiles(out, range(101))]
                assert ranks == sorted(ranks), levels


def test_member_order_does_not_matter():
    members = [MemberOutput("a", 3, -0.2), MemberOutput("b", 2, 0.1),
               MemberOutput("c", 4, 0.3), MemberOutput("d", 2, -0.4)]
    expected = {p: percentile_select(EnsembleOutput("c", tuple(members), ESI), p) for p in (0, 33, 50, 67, 100)}
    for order in permutations(members):
        out = EnsembleOutput("c", order, ESI)
        for p, selection in expected.items():
            assert percentile_select(out, p) == selection


def test_invalid_inputs():
    out = _ensemble([1, 2, 3])
    for p in (-1, 100.5, float("nan")):
        with pytest.raises(DomainError):
            percentile_select(out, p)
    with pytest.raises(DomainError):
        sweep_percentiles(out, [50, 0])
    with pytest.raises(DomainError):
        EnsembleOutput("c", (), ESI)
    with pytest.raises(DomainError):
        _ensemble([0, 2])


def test_distribution_counts_every_level():
    assert _ensemble([2, 2, 5]).distribution() == {1: 0, 2: 2, 3: 0, 4: 0, 5: 1}


def _panel():
    return SyntheticPanel(ESI, {"c1": 0.0}, {"a": -1.0, "b": 0.0, "c": 1.2})


def test_collect_outputs_with_synthetic_rater():
    rater = SyntheticRater(_panel())
    team = [Persona(pid, pid, descriptors=Descriptors(bias, 0.1, 1.0, 3.0))
            for pid, bias in (("a", 2.0), ("b", 3.0), ("c", 4.2))]
    out = collect_outputs(team, Case("c1", "x"), rater, ESI, parallelism=3)
    assert [(o.persona_id, o.level) for o in out.outputs] == [("a", 2), ("b", 3), ("c", 4)]
    assert out.outputs[2].bias == 4.2
    assert percentile_select(out, 100).persona_id == "a"


def test_repeated_sampling_labels():
    rater = SyntheticRater(_panel())
    members, samples = sampling_baseline(Persona("b", "b"), 3)
    out = collect_outputs(members, Case("c1", "x"), rater, ESI, samples=samples)
    assert [o.persona_id for o in out.outputs] == ["b", "b#1", "b#2"]
    assert {o.level for o in out.outputs} == {3}
    with pytest.raises(DomainError):
        collect_outputs(members, Case("c1", "x"), rater, ESI, samples=[0])


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"  ok {name}")
    print("inference tests passed")
