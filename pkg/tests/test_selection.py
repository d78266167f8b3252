"""Feasibility cascade: stage rules, clustering threshold and plant-and-recover.

Run:
  PYTHONPATH=. python tests/test_selection.py   (or: pytest tests/)
"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pytest

from steer.config import SelectionConfig
from steer.core_model import Case, CaseSplit, OrdinalScale, RatingMatrix
from steer.errors import DomainError, ExtinctionError
from steer.selection import (
    DELTA_MAX, DELTA_MIN, _calibrate, apply_constraints, calibrate_cluster_threshold,
    cluster_by_bias, filter_coherence, filter_safety, nearest_rank, prune_variance, safety_score,
)

SCALE = OrdinalScale(5, 1)
DEFAULTS = SelectionConfig()


def _safety_fixture(hits, total):
    cases = [Case(f"s{i}", "clear", CaseSplit.UNAMBIGUOUS, 1) for i in range(total)]
    entries = {(c.id, "p"): (1 if i < hits else 3) for i, c in enumerate(cases)}
    return RatingMatrix.from_entries(entries, SCALE), cases


def test_nearest_rank_quantile():
    values = [0.1 * i for i in range(1, 11)]
    assert nearest_rank(values, 0.85) == values[8]
    assert nearest_rank(values, 1.0) == values[9]
    assert nearest_rank([5.0], 0.5) == 5.0
    with pytest.raises(DomainError):
        nearest_rank([], 0.5)


def test_safety_score_counts_exact_matches():
    ratings, cases = _safety_fixture(10, 10)
    assert safety_score(ratings, "p", cases) == 1.0
    ratings, cases = _safety_fixture(9, 10)
    assert safety_score(ratings, "p", cases) == 0.9
    ratings, cases = _safety_fixture(0, 5)
    assert safety_score(ratings, "p", cases) == 0.0
    with pytest.raises(DomainError):
        safety_score(ratings, "other", cases)


def test_filter_safety_or_rule():
    scores = {"a": 0.95, "b": 0.92, "c": 0.50}
    assert filter_safety(list(scores), scores, DEFAULTS) == ["a", "b"]
    ones = {"a": 1.0, "b": 1.0, "c": 1.0}
    assert filter_safety(list(ones), ones, DEFAULTS) == ["a", "b", "c"]
    low = {"a": 0.85, "b": 0.80}
    assert filter_safety(list(low), low, DEFAULTS) == ["a"]
    with pytest.raises(DomainError):
        filter_safety([], {}, DEFAULTS)


def test_filter_coherence_culls_bottom_tier():
    scores = {f"p{i:02d}": float(i) / 5 for i in range(20)}
    kept = filter_coherence(list(scores), scores, DEFAULTS)
    assert sorted(set(scores) - set(kept)) == ["p00", "p01", "p02"]
    equal = {f"p{i}": 2.0 for i in range(20)}
    assert filter_coherence(list(equal), equal, DEFAULTS) == list(equal)
    assert filter_coherence(["solo"], {"solo": 0.0}, DEFAULTS) == ["solo"]


def test_cluster_by_bias():
    assert cluster_by_bias([0.0, 0.1, 0.9, 1.0], 0.3) == [[0.0, 0.1], [0.9, 1.0]]
    assert cluster_by_bias([0.0, 0.1, 0.2], 0.3) == [[0.0, 0.1, 0.2]]
    assert cluster_by_bias([0.0, 0.25], 0.25) == [[0.0], [0.25]]
    with pytest.raises(DomainError):
        cluster_by_bias([0.5, 0.1], 0.3)


def test_threshold_calibration():
    assert calibrate_cluster_threshold([0.0, 0.05, 0.95, 1.0]) == 0.25
    assert calibrate_cluster_threshold([0.0, 0.1]) == DELTA_MIN
    assert calibrate_cluster_threshold([0.0, 3.0]) == DELTA_MAX
    dense = [i / 10 for i in range(9)]
    delta, tightened = _calibrate(dense)
    assert tightened and delta == pytest.approx(0.12)
    with pytest.raises(DomainError):
        calibrate_cluster_threshold([1.0])


def test_tightening_fires_only_for_wide_single_cluster():
    narrow = [i * 0.02 for i in range(15)]   # range 0.28, one cluster
    assert _calibrate(narrow)[1] is False
    separated = [0.0, 0.1, 1.0, 1.1]         # range 1.1, two clusters
    assert _calibrate(separated) == (0.275, False)


def test_frozen_threshold_is_returned_unchanged():
    frozen = calibrate_cluster_threshold([0.0, 0.05, 0.95, 1.3])
    for generation in range(2, 6):
        assert calibrate_cluster_threshold([-4.0, 4.0], generation, frozen) == frozen


def test_unfrozen_calibration_only_in_first_generation():
    assert calibrate_cluster_threshold([0.0, 1.0], generation=1) == 0.25
    with pytest.raises(DomainError):
        calibrate_cluster_threshold([0.0, 1.0], generation=2)


def test_spectrum_ends_survive_variance_pruning():
    # one tight cluster whose noisiest members sit at both ends
    pool = [f"p{i:02d}" for i in range(20)]
    bias = {p: 2.0 + i * 0.01 for i, p in enumerate(pool)}
    s2 = {p: 0.1 for p in pool}
    s2["p00"] = s2["p19"] = 3.0
    s2["p04"] = 2.5
    ones = {p: 1.0 for p in pool}
    report = apply_constraints(pool, ones, {p: 3.0 for p in pool}, bias, s2, DEFAULTS)
    assert report.removed_ids("variance") == ["p04"]
    assert "p00" in report.survivors and "p19" in report.survivors
    survivor_biases = [bias[p] for p in report.survivors]
    assert (min(survivor_biases), max(survivor_biases)) == (bias["p00"], bias["p19"])


def test_prune_variance_rules():
    s2 = {f"p{i}": 0.1 for i in range(10)}
    s2["p9"] = 3.0
    assert prune_variance([list(s2)], s2, DEFAULTS) == ["p9"]
    small = {"a": 5.0, "b": 6.0, "c": 7.0}
    assert prune_variance([list(small)], small, DEFAULTS) == []
    flat = {f"q{i}": 0.4 for i in range(8)}
    assert prune_variance([list(flat)], flat, DEFAULTS) == []
    with pytest.raises(DomainError):
        prune_variance([["a", "zz", "b", "c"]], small, DEFAULTS)


def _planted_pool():
    """30 personas: 24 good in three bias clusters plus 6 planted failures."""
    safety, coherence, bias, s2 = {}, {}, {}, {}
    planted = {"safety": [], "coherence": [], "variance": []}
    for k, center in enumerate((-1.0, 0.0, 1.0)):
        for i in range(8):
            pid = f"c{k}-{i}"
            bias[pid] = center + (i - 3.5) * 0.01
            safety[pid], coherence[pid], s2[pid] = 1.0, 3.0, 0.1
        s2[f"c{k}-5"] = 2.0
        planted["variance"].append(f"c{k}-5")
    for i in range(3):
        pid = f"unsafe-{i}"
        bias[pid], safety[pid], coherence[pid], s2[pid] = -0.5 + i * 0.5, 0.5, 3.0, 0.1
        planted["safety"].append(pid)
    for i in range(3):
        pid = f"rambling-{i}"
        bias[pid], safety[pid], coherence[pid], s2[pid] = -0.9 + i, 1.0, 1.0, 0.1
        planted["coherence"].append(pid)
    return list(bias), safety, coherence, bias, s2, planted


def test_plant_and_recover():
    pool, safety, coherence, bias, s2, planted = _planted_pool()
    assert len(pool) == 30
    report = apply_constraints(pool, safety, coherence, bias, s2, DEFAULTS)
    for stage, ids in planted.items():
        assert sorted(report.removed_ids(stage)) == sorted(ids), stage
    assert len(report.removed) == 9
    assert len(report.clusters) == 3
    assert report.frozen_delta == DELTA_MAX and not report.delta_tightened
    assert set(report.survivors) | set(report.removed_ids()) == set(pool)
    assert not set(report.survivors) & set(report.removed_ids())


def test_stage_order_and_determinism():
    pool, safety, coherence, bias, s2, _ = _planted_pool()
    first = apply_constraints(pool, safety, coherence, bias, s2, DEFAULTS)
    second = apply_constraints(pool, safety, coherence, bias, s2, DEFAULTS)
    assert first.to_dict() == second.to_dict()
    # a persona failing safety is never attributed to a later stage
    unsafe = set(first.removed_ids("safety"))
    assert not unsafe & set(first.removed_ids("coherence") + first.removed_ids("variance"))


def test_all_pass():
    pool = [f"p{i}" for i in range(5)]
    ones = {p: 1.0 for p in pool}
    report = apply_constraints(
        pool, ones, {p: 3.0 for p in pool}, {p: i * 0.3 for i, p in enumerate(pool)},
        {p: 0.2 for p in pool}, DEFAULTS,
    )
    assert report.survivors == pool and report.removed == []


def test_frozen_delta_reused_by_cascade():
    pool, safety, coherence, bias, s2, _ = _planted_pool()
    report = apply_constraints(pool, safety, coherence, bias, s2, DEFAULTS, generation=3, frozen_delta=0.07)
    assert report.frozen_delta == 0.07


def test_extinction_is_an_error():
    with pytest.raises(ExtinctionError):
        apply_constraints([], {}, {}, {}, {}, DEFAULTS)
    with pytest.raises(DomainError):
        apply_constraints(["a"], {}, {"a": 1.0}, {"a": 0.0}, {"a": 0.0}, DEFAULTS)


def test_report_serializes():
    pool, safety, coherence, bias, s2, _ = _planted_pool()
    report = apply_constraints(pool, safety, coherence, bias, s2, DEFAULTS)
    data = report.to_dict()
    assert data["density_check"]
    assert {r["stage"] for r in data["removed"]} == {"safety", "coherence", "variance"}


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"  ok {name}")
    print("selection tests passed")
