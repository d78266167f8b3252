"""Coverage-based team assembly.

Run:
  PYTHONPATH=. python tests/test_team.py   (or: pytest tests/)
"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from steer.core_model import Descriptors, Persona
from steer.errors import DomainError
from steer.team import assemble_team, max_center_distance, team_from_dict, team_to_dict


def _persona(pid, bias, safety=1.0, coherence=3.0, variance=0.1):
    return Persona(pid, f"You are {pid}.", descriptors=Descriptors(bias, variance, safety, coherence))


def _random_pool(rng, size):
    return [_persona(f"p{i:03d}", float(b)) for i, b in enumerate(rng.uniform(-2.0, 2.0, size))]


def test_anchors_always_included():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        pool = _random_pool(rng, int(rng.integers(2, 31)))
        n = int(rng.integers(2, len(pool) + 1))
        team = assemble_team(pool, n)
        assert team.n == n and len(set(team.ids)) == n
        assert min(p.bias for p in pool) == team.biases[0]
        assert max(p.bias for p in pool) == team.biases[-1]
        assert team.biases == sorted(team.biases)


def test_whole_pool_and_pair():
    pool = [_persona("a", 0.0), _persona("b", 0.4), _persona("c", 0.9), _persona("d", 1.5)]
    assert sorted(assemble_team(pool, 4).ids) == ["a", "b", "c", "d"]
    pair = assemble_team(pool, 2)
    assert pair.ids == ["a", "d"]
    assert pair.provenance == ()
    assert max_center_distance(pair) is None


def test_bucket_prefers_quality_over_centrality():
    pool = [
        _persona("low", 0.0), _persona("high", 1.0),
        _persona("central", 0.5, safety=0.9), _persona("off-center", 0.3, safety=1.0),
    ]
    team = assemble_team(pool, 3)
    assert team.ids == ["low", "off-center", "high"]
    assert team.provenance[0].filled_from_bucket


def test_empty_bucket_borrows_nearest():
    pool = [_persona("lo", 0.0), _persona("hi", 3.0), _persona("x", 0.2), _persona("y", 0.4)]
    team = assemble_team(pool, 4)
    first, second = team.provenance
    assert first.persona_id == "y" and first.filled_from_bucket
    assert second.persona_id == "x" and not second.filled_from_bucket
    assert sorted(team.ids) == ["hi", "lo", "x", "y"]


def test_empty_bucket_breaks_distance_ties_on_quality():
    pool = [
        _persona("lo", 0.0), _persona("hi", 3.0),
        _persona("a", 0.5), _persona("b", 0.9, safety=0.95),
        _persona("d", 2.1, safety=0.95, coherence=3.5), _persona("c", 2.5),
    ]
    team = assemble_team(pool, 5)
    middle = team.provenance[1]
    # b and d are both 0.6 from the empty bucket's center; d is more coherent
    assert middle.persona_id == "d" and not middle.filled_from_bucket
    assert list(team.ids) == ["lo", "a", "d", "c", "hi"]


def test_coverage_bound_on_dense_pools():
    rng = np.random.default_rng(3)
    for _ in range(50):
        biases = np.linspace(0.0, 1.0, 201) + rng.uniform(-1e-3, 1e-3, 201)
        pool = [_persona(f"p{i:03d}", float(b)) for i, b in enumerate(biases)]
        n = int(rng.integers(3, 16))
        team = assemble_team(pool, n)
        width = (team.biases[-1] - team.biases[0]) / (n - 2)
        assert all(b.filled_from_bucket for b in team.provenance)
        assert max_center_distance(team) <= width / 2 + 1e-12


def test_deterministic_under_shuffle():
    rng = np.random.default_rng(5)
    pool = _random_pool(rng, 25)
    expected = assemble_team(pool, 8).ids
    for _ in range(20):
        shuffled = list(pool)
        rng.shuffle(shuffled)
        assert assemble_team(shuffled, 8).ids == expected


def test_invalid_requests():
    pool = [_persona("a", 0.0), _persona("b", 1.0), _persona("c", 2.0)]
    with pytest.raises(DomainError):
        assemble_team(pool, 1)
    with pytest.raises(DomainError):
        assemble_team(pool, 4)
    with pytest.raises(DomainError):
        assemble_team(pool + [_persona("a", 3.0)], 2)
    with pytest.raises(DomainError):
        assemble_team(pool + [Persona("bare", "no descriptors")], 2)
    with pytest.raises(DomainError):
        assemble_team([_persona("x", 1.0), _persona("y", 1.0)], 2)


def test_team_dict_keeps_members_and_provenance():
    rng = np.random.default_rng(9)
    team = assemble_team(_random_pool(rng, 12), 6)
    data = team_to_dict(team, {"k_levels": 5, "most_urgent_level": 1, "midpoint": 3})
    assert data["n"] == 6 and data["scale"]["k_levels"] == 5
    restored = team_from_dict(data)
    assert restored.ids == team.ids
    assert restored.provenance == team.provenance
    with pytest.raises(DomainError):
        team_from_dict({"members": []})


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"  ok {name}")
    print("team tests passed")
