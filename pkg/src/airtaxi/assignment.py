"""Agent-passenger assignment: cost matrix, k-best matchings and baselines."""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .mapgen import WorldMap
from .world import AgentState, Passenger


@dataclass
class CostMatrix:
    values: np.ndarray  # (n_agents, n_passengers), km
    agent_ids: list[int]
    passenger_ids: list[int]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class CandidateMatching:
    assignment: dict[int, int]  # agent id -> passenger id
    total_cost: float
    rank: int = 1
    psi: np.ndarray | None = None
    key: tuple = field(default=(), repr=False)


def build_cost_matrix(
    agents: Sequence[AgentState], passengers: Sequence[Passenger], world: WorldMap
) -> CostMatrix:
    """Distance from each agent to each waiting passenger's origin.

    An agent carrying a passenger is costed via that passenger's destination.
    """
    xy = world.xy
    ax = np.array([a.x for a in agents], dtype=float)
    ay = np.array([a.y for a in agents], dtype=float)
    carrying_dest = np.array(
        [a.target_vertiport if a.carrying and a.target_vertiport else 0 for a in agents],
        dtype=int,
    )
    origins = np.array([p.origin for p in passengers], dtype=int)
    return CostMatrix(
        cost_values(ax, ay, carrying_dest, origins, xy),
        [a.id for a in agents],
        [p.id for p in passengers],
    )


def cost_values(ax, ay, carrying_dest, origins, xy) -> np.ndarray:
    """Array form of :func:`build_cost_matrix`; ``carrying_dest`` 0 = empty."""
    n, p = len(ax), len(origins)
    if n == 0 or p == 0:
        return np.zeros((n, p))
    ox, oy = xy[origins - 1, 0], xy[origins - 1, 1]
    carrying = carrying_dest > 0
    dest = np.where(carrying, carrying_dest, 1) - 1
    dx, dy = xy[dest, 0], xy[dest, 1]
    # first leg: to the pickup directly, or to the current destination
    sx = np.where(carrying, dx, ax)
    sy = np.where(carrying, dy, ay)
    leg1 = np.where(carrying, np.hypot(dx - ax, dy - ay), 0.0)
    leg2 = np.hypot(ox[None, :] - sx[:, None], oy[None, :] - sy[:, None])
    return leg1[:, None] + leg2


# -- optimal and k-best assignment ------------------------------------------

def _solve(m: np.ndarray):
    """Min-cost assignment of every row of ``m`` (rows <= cols).

    Returns a column per row, or None if forbidden (inf) entries make the
    problem infeasible.
    """
    if m.shape[0] == 0:
        return np.zeros(0, dtype=int)
    try:
        rows, cols = linear_sum_assignment(m)
    except ValueError:
        return None
    if not np.all(np.isfinite(m[rows, cols])):
        return None
    out = np.empty(m.shape[0], dtype=int)
    out[rows] = cols
    return out


def _cost_of(values: np.ndarray, pairs) -> float:
    return math.fsum(float(values[i, j]) for i, j in pairs)


def _candidate(cm: CostMatrix, pairs, rank: int) -> CandidateMatching:
    pairs = sorted(pairs)
    n = cm.values.shape[0]
    key_cols = [-1] * n
    for i, j in pairs:
        key_cols[i] = j
    return CandidateMatching(
        assignment={cm.agent_ids[i]: cm.passenger_ids[j] for i, j in pairs},
        total_cost=_cost_of(cm.values, pairs),
        rank=rank,
        key=tuple(key_cols),
    )


def hungarian_solve(cm: CostMatrix) -> CandidateMatching:
    """Minimum-cost matching of size min(n_agents, n_passengers)."""
    n, p = cm.shape
    if n == 0 or p == 0:
        return CandidateMatching({}, 0.0, 1, key=tuple([-1] * n))
    m = cm.values if n <= p else cm.values.T
    cols = _solve(m)
    if n <= p:
        pairs = list(enumerate(cols.tolist()))
    else:
        pairs = [(int(a), r) for r, a in enumerate(cols.tolist())]
    return _candidate(cm, pairs, 1)


def murty_k_best(cm: CostMatrix, k: int) -> list[CandidateMatching]:
    """The k cheapest matchings in non-decreasing cost order.

    Murty's partitioning over the shorter side of the matrix: every row of
    the oriented problem is assigned, so a solution is split into
    subproblems that fix the first t-1 of its free pairs and forbid the t-th.
    Equal-cost solutions come out in lexicographic agent-major order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n, p = cm.shape
    if n == 0 or p == 0:
        return [hungarian_solve(cm)]
    transposed = n > p
    base = cm.values.T if transposed else cm.values
    rows_n = base.shape[0]

    def to_pairs(cols):
        if transposed:
            return [(int(c), r) for r, c in enumerate(cols)]
        return [(r, int(c)) for r, c in enumerate(cols)]

    def sub_solve(forced: dict[int, int], banned: frozenset):
        free_rows = [r for r in range(rows_n) if r not in forced]
        used_cols = set(forced.values())
        free_cols = [c for c in range(base.shape[1]) if c not in used_cols]
        sub = base[np.ix_(free_rows, free_cols)].astype(float, copy=True)
        if banned:
            rpos = {r: i for i, r in enumerate(free_rows)}
            cpos = {c: i for i, c in enumerate(free_cols)}
            for r, c in banned:
                if r in rpos and c in cpos:
                    sub[rpos[r], cpos[c]] = np.inf
        sol = _solve(sub)
        if sol is None:
            return None
        cols = [0] * rows_n
        for r, c in forced.items():
            cols[r] = c
        for i, r in enumerate(free_rows):
            cols[r] = free_cols[sol[i]]
        return cols

    def push(heap, counter, cols, forced, banned):
        cand = _candidate(cm, to_pairs(cols), 0)
        heapq.heappush(heap, (cand.total_cost, cand.key, next(counter), cols, forced, banned, cand))

    counter = itertools.count()
    heap: list = []
    first = sub_solve({}, frozenset())
    push(heap, counter, first, {}, frozenset())
    out: list[CandidateMatching] = []
    while heap and len(out) < k:
        _, _, _, cols, forced, banned, cand = heapq.heappop(heap)
        cand.rank = len(out) + 1
        out.append(cand)
        if len(out) == k:
            break
        fixed = dict(forced)
        for r in range(rows_n):
            if r in forced:
                continue
            child_banned = banned | {(r, cols[r])}
            sol = sub_solve(fixed, child_banned)
            if sol is not None:
                push(heap, counter, sol, dict(fixed), child_banned)
            fixed[r] = cols[r]
    # the heap only orders ties among solutions generated so far
    out.sort(key=lambda c: (c.total_cost, c.key))
    for rank, c in enumerate(out, 1):
        c.rank = rank
    return out


# -- final matching selection -----------------------------------------------

def nearest_vertiport(x, y, xy: np.ndarray):
    """1-based id of the nearest vertiport; vectorized over x, y."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d2 = (x[:, None] - xy[None, :, 0]) ** 2 + (y[:, None] - xy[None, :, 1]) ** 2
    return np.argmin(d2, axis=1) + 1


def fallback_terminals(agents: Sequence[AgentState], world: WorldMap) -> dict[int, int]:
    """Terminal vertiport of each agent if it is left unmatched."""
    near = nearest_vertiport([a.x for a in agents], [a.y for a in agents], world.xy)
    out = {}
    for a, nv in zip(agents, near):
        if a.carrying and a.target_vertiport:
            out[a.id] = a.target_vertiport
        elif a.grounded_at:
            out[a.id] = a.grounded_at
        else:
            out[a.id] = int(nv)
    return out


def future_distribution(
    matching: CandidateMatching,
    agents: Sequence[AgentState],
    world: WorldMap,
    passengers: Mapping[int, Passenger],
    fallback: Mapping[int, int] | None = None,
) -> np.ndarray:
    """Count of agents ending at each vertiport if the matching is served."""
    fallback = fallback if fallback is not None else fallback_terminals(agents, world)
    psi = np.zeros(world.m)
    for a in agents:
        pid = matching.assignment.get(a.id)
        term = passengers[pid].destination if pid is not None else fallback[a.id]
        psi[term - 1] += 1
    return psi


def desired_distribution(world: WorldMap, n_agents: int) -> np.ndarray:
    rates = world.rates
    if rates.sum() <= 0:
        return np.full(world.m, n_agents / world.m)
    return n_agents * rates / rates.sum()


def select_matching(candidates: Sequence[CandidateMatching], psi_star) -> CandidateMatching:
    """Candidate whose psi is closest to ``psi_star`` in L1; ties -> lower rank."""
    if not candidates:
        raise ValueError("no candidate matchings")
    psi_star = np.asarray(psi_star, dtype=float)
    best, best_score = None, math.inf
    for cand in sorted(candidates, key=lambda c: c.rank):
        score = float(np.abs(psi_star - cand.psi).sum())
        if score < best_score:
            best, best_score = cand, score
    return best


def proposed_matching(
    agents: Sequence[AgentState],
    passengers: Sequence[Passenger],
    world: WorldMap,
    k: int = 10,
) -> CandidateMatching:
    """k-best candidates re-ranked by distance to the rate-proportional fleet spread."""
    cm = build_cost_matrix(agents, passengers, world)
    cands = murty_k_best(cm, k)
    by_id = {p.id: p for p in passengers}
    fb = fallback_terminals(agents, world)
    for c in cands:
        c.psi = future_distribution(c, agents, world, by_id, fb)
    return select_matching(cands, desired_distribution(world, len(agents)))


# -- baselines --------------------------------------------------------------

def greedy_assign(agents: Sequence[AgentState], passengers: Sequence[Passenger], world: WorldMap) -> dict[int, int]:
    """Each empty agent independently targets its nearest waiting passenger.

    Several agents may chase the same passenger. Carrying agents finish
    their delivery first and are left out.
    """
    free = [a for a in agents if not a.carrying]
    if not free or not passengers:
        return {}
    xy = world.xy
    origins = np.array([p.origin for p in passengers]) - 1
    ax = np.array([a.x for a in free])
    ay = np.array([a.y for a in free])
    d = np.hypot(xy[origins, 0][None, :] - ax[:, None], xy[origins, 1][None, :] - ay[:, None])
    best = np.argmin(d, axis=1)
    return {a.id: passengers[j].id for a, j in zip(free, best)}


def first_dispatch_assign(
    agents: Sequence[AgentState],
    passengers: Sequence[Passenger],
    world: WorldMap,
    current: Mapping[int, int],
) -> dict[int, int]:
    """Match open agents to unassigned passengers; never revisit commitments.

    ``current`` maps agent id to the passenger it is committed to pick up.
    Returns the updated full assignment.
    """
    taken = set(current.values())
    free_agents = [a for a in agents if not a.carrying and a.id not in current]
    open_pax = [p for p in passengers if p.id not in taken]
    out = dict(current)
    if free_agents and open_pax:
        best = hungarian_solve(build_cost_matrix(free_agents, open_pax, world))
        out.update(best.assignment)
    return out
