
import numpy as np
import pytest

from airtaxi.assignment import (
    CandidateMatching,
    CostMatrix,
    build_cost_matrix,
    desired_distribution,
    first_dispatch_assign,
    future_distribution,
    greedy_assign,
    hungarian_solve,
    murty_k_best,
    proposed_matching,
    select_matching,
)
from airtaxi.world import AgentState, Passenger
from conftest import make_world
from oracles import brute_force_matchings, n_matchings


def cm(values):
    values = np.asarray(values, dtype=float)
    return CostMatrix(values, list(range(values.shape[0])), list(range(values.shape[1])))


def test_cost_matrix_examples():
    w = make_world([(3, 4), (3, 8), (0, 0)])
    empty = AgentState(0, 0.0, 0.0)
    carrying = AgentState(1, 0.0, 0.0, carrying=9, target_vertiport=1)
    grounded = AgentState(2, 3.0, 4.0, grounded_at=1)
    pax = [Passenger(1, 1, 3, 0.0), Passenger(2, 2, 3, 0.0)]
    c = build_cost_matrix([empty, carrying, grounded], pax, w)
    assert c.values[0, 0] == pytest.approx(5.0)
    assert c.values[1, 1] == pytest.approx(9.0)
    assert c.values[2, 0] == 0.0
    assert c.agent_ids == [0, 1, 2] and c.passenger_ids == [1, 2]


def test_hungarian_examples():
    m = hungarian_solve(cm([[1, 2], [2, 4]]))
    assert m.assignment == {0: 1, 1: 0} and m.total_cost == 4
    diag = np.full((4, 4), 100.0)
    np.fill_diagonal(diag, 0.0)
    assert hungarian_solve(cm(diag)).assignment == {i: i for i in range(4)}
    tall = hungarian_solve(cm([[5.0], [2.0], [7.0]]))
    assert tall.assignment == {1: 0} and tall.total_cost == 2.0


def test_murty_examples():
    assert [c.total_cost for c in murty_k_best(cm([[1, 2], [2, 4]]), 2)] == [4, 5]
    rng = np.random.default_rng(1)
    c = cm(rng.uniform(0, 10, (4, 4)))
    assert murty_k_best(c, 1)[0].assignment == hungarian_solve(c).assignment
    got = murty_k_best(c, 24)
    assert [g.total_cost for g in got] == [cost for cost, _ in brute_force_matchings(c.values)]


@pytest.mark.parametrize("integer", [False, True])
def test_murty_matches_brute_force(integer):
    rng = np.random.default_rng(11 if integer else 12)
    for _ in range(60):
        n, p = rng.integers(1, 6, size=2)
        vals = rng.integers(0, 4, (n, p)).astype(float) if integer else rng.uniform(0, 20, (n, p))
        expected = brute_force_matchings(vals)
        got = murty_k_best(cm(vals), n_matchings(n, p))
        assert [(g.total_cost, g.key) for g in got] == expected
        assert [g.rank for g in got] == list(range(1, len(got) + 1))


def test_murty_fewer_than_k_and_empty():
    got = murty_k_best(cm([[1.0, 2.0]]), 10)
    assert len(got) == 2
    none = murty_k_best(cm(np.zeros((3, 0))), 5)
    assert len(none) == 1 and none[0].assignment == {}
    with pytest.raises(ValueError):
        murty_k_best(cm([[1.0]]), 0)


def test_future_distribution_rules():
    w = make_world([(0, 0), (10, 0)])
    a0 = AgentState(0, 1.0, 0.0)
    a1 = AgentState(1, 9.0, 0.0)
    pax = {1: Passenger(1, 2, 1, 0.0), 2: Passenger(2, 2, 1, 0.0)}
    both = CandidateMatching({0: 1, 1: 2}, 0.0)
    assert future_distribution(both, [a0, a1], w, pax).tolist() == [2, 0]
    idle = AgentState(2, 10.0, 0.0, grounded_at=2)
    assert future_distribution(CandidateMatching({}, 0.0), [idle], w, pax).tolist() == [0, 1]
    carrier = AgentState(3, 1.0, 0.0, carrying=7, target_vertiport=2)
    mixed = CandidateMatching({0: 1}, 0.0)
    assert future_distribution(mixed, [a0, carrier], w, pax).tolist() == [1, 1]


def test_select_matching_examples():
    a = CandidateMatching({}, 1.0, rank=1, psi=np.array([2.0, 0.0]))
    b = CandidateMatching({}, 2.0, rank=2, psi=np.array([1.0, 1.0]))
    assert select_matching([a, b], [1, 1]) is b
    assert select_matching([a], [1, 1]) is a
    c = CandidateMatching({}, 2.0, rank=2, psi=np.array([0.0, 2.0]))
    assert select_matching([c, a], [1, 1]) is a
    with pytest.raises(ValueError):
        select_matching([], [1, 1])


def test_desired_distribution_scales_to_fleet():
    w = make_world([(0, 0), (10, 0), (0, 10)], lam=[10.0, 30.0, 60.0])
    assert desired_distribution(w, 20).tolist() == pytest.approx([2, 6, 12])


def test_proposed_matching_prefers_balanced_outcome():
    # Both agents are equally far from both passengers, so every matching
    # costs the same; only the one that sends an agent to each busy
    # vertiport matches psi* = [0, 1, 1].
    w = make_world([(0, 0), (10, 0), (0, 10)], lam=[0.0, 50.0, 50.0])
    agents = [AgentState(0, 0.0, 0.0, grounded_at=1), AgentState(1, 0.0, 0.0, grounded_at=1)]
    pax = [Passenger(1, 1, 2, 0.0), Passenger(2, 1, 3, 0.0)]
    chosen = proposed_matching(agents, pax, w, k=10)
    assert sorted(chosen.assignment.values()) == [1, 2]
    assert chosen.psi.tolist() == [0, 1, 1]


def test_greedy_examples():
    w = make_world([(0, 0), (2, 0), (0, 3)])
    a = AgentState(0, 0.0, 0.0)
    b = AgentState(1, 0.5, 0.0)
    lone = [Passenger(1, 2, 1, 0.0)]
    assert greedy_assign([a, b], lone, w) == {0: 1, 1: 1}
    assert greedy_assign([a, b], [], w) == {}
    two = [Passenger(1, 2, 1, 0.0), Passenger(2, 3, 1, 0.0)]
    assert greedy_assign([a], two, w) == {0: 1}
    carrying = AgentState(2, 0.0, 0.0, carrying=5, target_vertiport=2)
    assert greedy_assign([carrying], two, w) == {}


def test_first_dispatch_examples():
    w = make_world([(0, 0), (2, 0), (0, 3), (20, 0)])
    a = AgentState(0, 0.0, 0.0)
    pax = [Passenger(1, 2, 1, 0.0), Passenger(2, 3, 1, 0.0)]
    assert first_dispatch_assign([a], pax, w, {0: 2}) == {0: 2}
    assert first_dispatch_assign([a], pax, w, {}) == {0: 1}
    # committed to the far passenger; a nearer one appearing changes nothing
    far = [Passenger(3, 4, 1, 0.0), Passenger(4, 2, 1, 0.0)]
    assert first_dispatch_assign([a], far, w, {0: 3}) == {0: 3}
