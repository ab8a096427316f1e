"""Greedy flight policy, conflict clustering and selective UCT deconfliction.

Planning works on a :class:`FleetView`, a structure-of-arrays snapshot of
the fleet with each agent's target position already resolved. Joint
actions are arrays too; :meth:`JointAction.actions` converts to per-agent
:class:`~airtaxi.world.AgentAction` values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .streams import stream
from .world import (
    TWO_PI,
    AgentState,
    ContractViolation,
    Flying,
    Grounded,
    KinematicParams,
    advance_flying,
    close_pairs,
    wrap_pi,
)

FLY, LAND, STAY, TAKEOFF = 0, 1, 2, 3


@dataclass(frozen=True)
class DiscreteActionSet:
    omegas: tuple[float, ...] = (-0.04, 0.0, 0.04)
    takeoff_angles: tuple[float, ...] = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)


@dataclass(frozen=True)
class SearchConfig:
    iterations: int = 50
    max_depth: int = 4
    c_uct: float = math.sqrt(2.0)
    discount: float = 0.95
    r_los: float = -1000.0
    r_land: float = 100.0
    distance_weight: float = 10.0
    lookahead_s: float = 60.0
    sweeps: int = 1
    actions: DiscreteActionSet = field(default_factory=DiscreteActionSet)

    def __post_init__(self):
        if self.iterations < 1 or self.max_depth < 1:
            raise ValueError("iterations and max_depth must be >= 1")
        if not self.r_los < 0 < self.r_land:
            raise ValueError("need r_los < 0 < r_land")


@dataclass
class FleetView:
    """Planner snapshot. Targets are NaN for agents without one.

    ``ready`` marks grounded agents cleared to take off this step.
    """
    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    flying: np.ndarray
    level: np.ndarray
    tx: np.ndarray
    ty: np.ndarray
    ready: np.ndarray

    @classmethod
    def from_states(cls, agents, ports, ready=()):
        """Build a view from AgentStates; ``ports`` maps vertiport id -> (x, y)."""
        n = len(agents)
        tx = np.full(n, np.nan)
        ty = np.full(n, np.nan)
        for i, a in enumerate(agents):
            if a.target_vertiport:
                tx[i], ty[i] = ports[a.target_vertiport]
        ready_ids = set(ready)
        return cls(
            ids=np.array([a.id for a in agents], dtype=int),
            x=np.array([a.x for a in agents], dtype=float),
            y=np.array([a.y for a in agents], dtype=float),
            theta=np.array([a.theta for a in agents], dtype=float),
            flying=np.array([a.flying for a in agents], dtype=bool),
            level=np.array([a.flight_level for a in agents], dtype=int),
            tx=tx,
            ty=ty,
            ready=np.array([a.id in ready_ids for a in agents], dtype=bool),
        )

    def __len__(self):
        return len(self.ids)

    def subset(self, idx) -> "FleetView":
        return FleetView(**{k: getattr(self, k)[idx] for k in self.__dataclass_fields__})


@dataclass
class JointAction:
    kind: np.ndarray  # FLY / LAND / STAY / TAKEOFF
    omega: np.ndarray
    theta_takeoff: np.ndarray

    def copy(self) -> "JointAction":
        return JointAction(self.kind.copy(), self.omega.copy(), self.theta_takeoff.copy())

    def action(self, i: int):
        k = self.kind[i]
        if k == FLY:
            return Flying(omega=float(self.omega[i]))
        if k == LAND:
            return Flying(omega=0.0, land=True)
        if k == TAKEOFF:
            return Grounded(theta_takeoff=float(self.theta_takeoff[i]), stay=False)
        return Grounded(stay=True)

    def actions(self) -> list:
        return [self.action(i) for i in range(len(self.kind))]

    def __eq__(self, other):
        return (
            isinstance(other, JointAction)
            and np.array_equal(self.kind, other.kind)
            and np.array_equal(self.omega, other.omega)
            and np.array_equal(self.theta_takeoff, other.theta_takeoff)
        )


# -- greedy policy ----------------------------------------------------------

def greedy_omega(x, y, theta, tx, ty, params: KinematicParams):
    """Turn rate that best closes the heading error, clamped to omega_max."""
    bearing = np.arctan2(ty - y, tx - x)
    return np.clip(wrap_pi(bearing - theta) / params.dt, -params.omega_max, params.omega_max)


def greedy_arrays(view: FleetView, params: KinematicParams) -> JointAction:
    n = len(view)
    kind = np.full(n, STAY, dtype=np.int8)
    omega = np.zeros(n)
    takeoff = np.zeros(n)
    has_t = ~np.isnan(view.tx)
    dx = np.where(has_t, view.tx - view.x, 0.0)
    dy = np.where(has_t, view.ty - view.y, 0.0)
    bearing = np.arctan2(dy, dx)
    fly = view.flying
    land = fly & has_t & (dx * dx + dy * dy <= params.d_land ** 2)
    steer = fly & ~land
    kind[steer] = FLY
    omega[steer & has_t] = np.clip(
        wrap_pi(bearing - view.theta)[steer & has_t] / params.dt,
        -params.omega_max,
        params.omega_max,
    )
    kind[land] = LAND
    go = ~fly & view.ready & has_t & (dx * dx + dy * dy >= 1e-18)
    kind[go] = TAKEOFF
    takeoff[go] = np.mod(bearing[go], TWO_PI)
    return JointAction(kind, omega, takeoff)


def greedy_action(agent: AgentState, target: tuple[float, float] | None, params: KinematicParams, ready: bool = True):
    """Greedy action for one agent toward ``target`` (a position, or None).

    Grounded agents take off toward the target when ``ready`` and the target
    is elsewhere; they stay otherwise.
    """
    if target is None:
        return Flying(omega=0.0) if agent.flying else Grounded(stay=True)
    tx, ty = target
    if not agent.flying:
        at_target = math.hypot(tx - agent.x, ty - agent.y) < 1e-9
        if at_target or not ready:
            return Grounded(stay=True)
    view = FleetView(
        ids=np.array([agent.id]),
        x=np.array([agent.x]),
        y=np.array([agent.y]),
        theta=np.array([agent.theta]),
        flying=np.array([agent.flying]),
        level=np.array([agent.flight_level]),
        tx=np.array([tx]),
        ty=np.array([ty]),
        ready=np.array([True]),
    )
    return greedy_arrays(view, params).action(0)


def joint_greedy(view: FleetView, params: KinematicParams) -> JointAction:
    """Independent greedy action per agent, in view order."""
    return greedy_arrays(view, params)


@dataclass
class RolloutState:
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    flying: np.ndarray
    landed: np.ndarray

    @classmethod
    def of(cls, view: FleetView) -> "RolloutState":
        n = len(view)
        return cls(view.x.copy(), view.y.copy(), view.theta.copy(), view.flying.copy(), np.zeros(n, bool))


def apply_joint(view: FleetView, st: RolloutState, act: JointAction, params: KinematicParams) -> RolloutState:
    """One kinematic step of a rollout state (targets frozen)."""
    x, y, th = st.x.copy(), st.y.copy(), st.theta.copy()
    flying, landed = st.flying.copy(), st.landed.copy()
    fly = act.kind == FLY
    if fly.any():
        x[fly], y[fly], th[fly] = advance_flying(x[fly], y[fly], th[fly], act.omega[fly], params)
    land = act.kind == LAND
    if land.any():
        x[land], y[land] = view.tx[land], view.ty[land]
        flying[land] = False
        landed[land] = True
    to = act.kind == TAKEOFF
    if to.any():
        th[to] = act.theta_takeoff[to]
        flying[to] = True
    return RolloutState(x, y, th, flying, landed)


def rollout_greedy_action(view: FleetView, st: RolloutState, params: KinematicParams) -> JointAction:
    """Greedy action inside a rollout: nobody takes off after the first step."""
    v = replace(view, x=st.x, y=st.y, theta=st.theta, flying=st.flying, ready=np.zeros(len(view), bool))
    return greedy_arrays(v, params)


# -- conflict clusters ------------------------------------------------------

def _components(n_nodes: int, pairs) -> list[list[int]]:
    parent = list(range(n_nodes))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    touched = set()
    for a, b in pairs:
        touched.update((a, b))
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for a in sorted(touched):
        groups.setdefault(find(a), []).append(a)
    return sorted(groups.values())


def lookahead_steps(config: SearchConfig, params: KinematicParams) -> int:
    return max(1, int(round(config.lookahead_s / params.dt)))


def find_conflict_clusters(view: FleetView, params: KinematicParams, lookahead_s: float = 60.0) -> list[list[int]]:
    """Groups of agents (view indices) that lose separation in a greedy rollout.

    The fleet follows the greedy policy with frozen targets for
    ``lookahead_s``; LOS pairs seen at any step are joined transitively.
    """
    steps = max(1, int(round(lookahead_s / params.dt)))
    st = RolloutState.of(view)
    act = greedy_arrays(view, params)
    pairs = set()
    for s in range(steps):
        st = apply_joint(view, st, act, params)
        pairs.update(close_pairs(st.x, st.y, view.level, st.flying, params.los_radius))
        act = rollout_greedy_action(view, st, params)
    return _components(len(view), pairs)


# -- selective UCT ----------------------------------------------------------

@dataclass
class _Node:
    state: RolloutState
    depth: int
    terminal: bool = False
    options: list = field(default_factory=list)  # (kind, value) for the searched agent
    children: dict = field(default_factory=dict)
    untried: list = field(default_factory=list)
    visits: int = 0
    value: float = 0.0
    reward: float = 0.0  # reward collected on the edge into this node


class _AgentSearch:
    """UCT over one agent's actions with everyone else fixed or greedy."""

    def __init__(self, view, agent, committed: JointAction, config: SearchConfig, params, rng):
        self.view = view
        self.i = agent
        self.committed = committed
        self.cfg = config
        self.params = params
        self.rng = rng
        self.horizon = max(config.max_depth, lookahead_steps(config, params))
        same = view.level == view.level[agent]
        self.peers = np.flatnonzero(same & (np.arange(len(view)) != agent))

    def options(self, st: RolloutState, depth: int, act: JointAction):
        """Searchable actions for the agent at a node; act holds its greedy action."""
        i = self.i
        if act.kind[i] in (LAND, STAY):
            return [(int(act.kind[i]), 0.0)]
        opts = []
        if depth == 0:
            c = self.committed
            opts.append((int(c.kind[i]), float(c.omega[i] if c.kind[i] == FLY else c.theta_takeoff[i])))
        if act.kind[i] == TAKEOFF:
            opts.append((TAKEOFF, float(act.theta_takeoff[i])))
            opts += [(TAKEOFF, a) for a in self.cfg.actions.takeoff_angles]
            opts.append((STAY, 0.0))  # delaying the takeoff is always legal
        else:
            opts.append((FLY, float(act.omega[i])))
            opts += [(FLY, w) for w in self.cfg.actions.omegas]
        seen, out = set(), []
        for o in opts:
            if o not in seen:
                seen.add(o)
                out.append(o)
        return out

    def base_action(self, st: RolloutState, depth: int) -> JointAction:
        if depth == 0:
            return self.committed.copy()
        return rollout_greedy_action(self.view, st, self.params)

    def own_greedy(self, st: RolloutState, depth: int) -> JointAction:
        if depth == 0:
            return greedy_arrays(self.view, self.params)
        return rollout_greedy_action(self.view, st, self.params)

    def step(self, st: RolloutState, depth: int, option) -> tuple[RolloutState, float, bool]:
        act = self.base_action(st, depth)
        kind, val = option
        i = self.i
        act.kind[i] = kind
        if kind == FLY:
            act.omega[i] = val
        elif kind == TAKEOFF:
            act.theta_takeoff[i] = val
        nxt = apply_joint(self.view, st, act, self.params)
        return nxt, self.reward(nxt, kind), kind == LAND

    def reward(self, st: RolloutState, kind) -> float:
        i, cfg, p = self.i, self.cfg, self.params
        if kind == LAND:
            return cfg.r_land
        if not st.flying[i]:
            return 0.0
        dist = math.hypot(self.view.tx[i] - st.x[i], self.view.ty[i] - st.y[i])
        r = cfg.distance_weight / (1.0 + dist)
        if self.peers.size:
            pk = self.peers[st.flying[self.peers]]
            if pk.size:
                d2 = (st.x[pk] - st.x[i]) ** 2 + (st.y[pk] - st.y[i]) ** 2
                if np.any(d2 < p.los_radius ** 2):
                    r += cfg.r_los
        return r

    def make_node(self, st, depth, terminal) -> _Node:
        node = _Node(st, depth, terminal)
        if not terminal and depth < self.cfg.max_depth:
            node.options = self.options(st, depth, self.own_greedy(st, depth))
            node.untried = list(range(len(node.options)))
        return node

    def rollout(self, st: RolloutState, depth: int) -> float:
        total, disc = 0.0, 1.0
        while depth < self.horizon:
            act = self.own_greedy(st, depth) if depth else self.committed.copy()
            kind = int(act.kind[self.i])
            st = apply_joint(self.view, st, act, self.params)
            total += disc * self.reward(st, kind)
            disc *= self.cfg.discount
            depth += 1
            if kind == LAND:
                break
        return total

    def run(self):
        root = self.make_node(RolloutState.of(self.view), 0, False)
        cfg = self.cfg
        for _ in range(cfg.iterations):
            node, path = root, [root]
            while True:
                if node.terminal or node.depth >= cfg.max_depth:
                    tail = 0.0 if node.terminal else self.rollout(node.state, node.depth)
                    break
                if node.untried:
                    pick = node.untried.pop(int(self.rng.integers(len(node.untried))))
                    st, r, term = self.step(node.state, node.depth, node.options[pick])
                    child = self.make_node(st, node.depth + 1, term)
                    child.reward = r
                    node.children[pick] = child
                    path.append(child)
                    tail = 0.0 if term else self.rollout(st, child.depth)
                    break
                log_n = math.log(node.visits)
                node = max(
                    node.children.values(),
                    key=lambda c: c.value / c.visits + cfg.c_uct * math.sqrt(log_n / c.visits),
                )
                path.append(node)
            # node.value accumulates the return of the edge leading into it
            g = tail
            for nd in reversed(path):
                g = nd.reward + cfg.discount * g
                nd.visits += 1
                nd.value += g
        best, best_q = None, -math.inf
        root_q = {}
        for idx in sorted(root.children):
            c = root.children[idx]
            q = c.value / c.visits
            root_q[root.options[idx]] = q
            if q > best_q:
                best, best_q = root.options[idx], q
        return best, root_q


def mcts_plan(
    view: FleetView,
    clusters: list[list[int]],
    config: SearchConfig,
    params: KinematicParams,
    seed: int = 0,
    timestep: int = 0,
    diagnostics: list | None = None,
) -> JointAction:
    """Refine the greedy joint action inside each conflict cluster.

    Agents of a cluster are optimized one at a time (alternating
    maximization, ``config.sweeps`` passes in id order); each search branches
    only on that agent's actions. Other agents keep their committed action at
    the root and act greedily deeper in the tree.
    """
    joint = greedy_arrays(view, params)
    for cluster in clusters:
        if len(cluster) < 2:
            raise ContractViolation("a conflict cluster needs at least two agents")
        cid = int(view.ids[min(cluster)])
        rng = stream(seed, "mcts", cid, timestep)
        sub_idx = _search_scope(view, cluster, params, config)
        sub = view.subset(sub_idx)
        pos = {int(g): k for k, g in enumerate(sub_idx)}
        committed = JointAction(joint.kind[sub_idx].copy(), joint.omega[sub_idx].copy(), joint.theta_takeoff[sub_idx].copy())
        record = {"cluster": [int(view.ids[i]) for i in cluster], "iterations": config.iterations, "root_values": {}}
        for _ in range(config.sweeps):
            for member in sorted(cluster, key=lambda i: view.ids[i]):
                k = pos[member]
                search = _AgentSearch(sub, k, committed, config, params, rng)
                choice, root_q = search.run()
                if choice is None:
                    continue
                kind, val = choice
                committed.kind[k] = kind
                if kind == FLY:
                    committed.omega[k] = val
                elif kind == TAKEOFF:
                    committed.theta_takeoff[k] = val
                record["root_values"][str(int(view.ids[member]))] = round(max(root_q.values()), 6)
        for g, k in pos.items():
            joint.kind[g] = committed.kind[k]
            joint.omega[g] = committed.omega[k]
            joint.theta_takeoff[g] = committed.theta_takeoff[k]
        if diagnostics is not None:
            diagnostics.append(record)
    return joint


def _search_scope(view: FleetView, cluster, params, config) -> np.ndarray:
    """Cluster members plus airborne agents near enough to interact."""
    members = np.array(sorted(cluster))
    active = view.flying | view.ready
    levels = np.unique(view.level[members])
    reach = 2 * params.v * params.dt * max(config.max_depth, lookahead_steps(config, params)) + params.los_radius
    dx = view.x[:, None] - view.x[members][None, :]
    dy = view.y[:, None] - view.y[members][None, :]
    near = np.any(dx * dx + dy * dy <= reach * reach, axis=1)
    mask = active & np.isin(view.level, levels) & near
    mask[members] = True
    return np.flatnonzero(mask)
