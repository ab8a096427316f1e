"""Timestep simulation of the air taxi network.

Each step runs, in order: passenger arrivals, assignment, flight-level
selection for departing agents, trajectory planning, the kinematic update,
boarding/delivery, and conflict accounting. All events of a step carry the
step's end time.
"""
from __future__ import annotations

import json
import math
import subprocess
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .assignment import CostMatrix, hungarian_solve, murty_k_best, nearest_vertiport, cost_values
from .levels import Fly, build_density_stack, random_level_baseline, select_flight_level
from .mapgen import WorldMap
from .streams import stream
from .trajectory import (
    FLY,
    LAND,
    TAKEOFF,
    FleetView,
    SearchConfig,
    find_conflict_clusters,
    greedy_arrays,
    mcts_plan,
)
from .world import (
    ConflictReport,
    KinematicParams,
    Passenger,
    advance_flying,
    close_pairs,
    wrap_pi,
)

TRACE_SCHEMA_VERSION = 1
ASSIGNMENT_METHODS = ("proposed", "greedy", "first_dispatch")
TRAJECTORY_METHODS = ("greedy", "mcts")
LEVEL_METHODS = ("proposed", "random")


class SimulationAbort(RuntimeError):
    """An internal invariant broke; ``dump`` holds the offending state."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class SimConfig:
    n_agents: int = 10
    assignment: str = "proposed"
    trajectory: str = "greedy"
    # None: proposed selection for the proposed assignment, random otherwise
    levels: str | None = None
    flight_levels: int = 1
    k: int = 10
    phi: int = 20
    grid_cells: int = 128
    sigma0: float = 1.0
    sigma_rate: float = 0.25
    hold_threshold: float = 0.5
    # recompute the proposed matching every step rather than only when the
    # waiting set or the carried passengers change
    rematch_every_step: bool = False
    passengers_per_agent: int = 10
    max_steps: int = 100_000
    record_agents: bool = True
    params: KinematicParams = field(default_factory=KinematicParams)
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self):
        if isinstance(self.params, dict):
            self.params = KinematicParams(**self.params)
        if isinstance(self.search, dict):
            from .trajectory import DiscreteActionSet

            s = dict(self.search)
            if isinstance(s.get("actions"), dict):
                s["actions"] = DiscreteActionSet(**{k: tuple(v) for k, v in s["actions"].items()})
            self.search = SearchConfig(**s)
        self.validate()

    def validate(self) -> None:
        if self.assignment not in ASSIGNMENT_METHODS:
            raise ValueError(f"assignment must be one of {ASSIGNMENT_METHODS}")
        if self.trajectory not in TRAJECTORY_METHODS:
            raise ValueError(f"trajectory must be one of {TRAJECTORY_METHODS}")
        if self.levels is not None and self.levels not in LEVEL_METHODS:
            raise ValueError(f"levels must be one of {LEVEL_METHODS}")
        if self.n_agents < 1 or self.flight_levels < 1 or self.k < 1 or self.phi < 1:
            raise ValueError("n_agents, flight_levels, k and phi must be >= 1")
        if self.passengers_per_agent < 1 or self.max_steps < 1:
            raise ValueError("passengers_per_agent and max_steps must be >= 1")

    @property
    def level_method(self) -> str:
        if self.levels is not None:
            return self.levels
        return "proposed" if self.assignment == "proposed" else "random"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = self.level_method
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@lru_cache(maxsize=1)
def build_id() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        desc = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


# -- trace ------------------------------------------------------------------

@dataclass
class StepRecord:
    time: float
    agents: tuple | None
    events: list
    counters: dict
    search: list | None = None

    def to_json(self) -> dict:
        out = {"time": self.time}
        if self.agents is not None:
            x, y, th, g, c, lv, tv, tp = self.agents
            out["agents"] = [
                {
                    "id": i,
                    "x": float(x[i]),
                    "y": float(y[i]),
                    "theta": float(th[i]),
                    "grounded_at": int(g[i]),
                    "carrying": int(c[i]),
                    "flight_level": int(lv[i]),
                    "target": int(tv[i]) or None,
                    "target_passenger": int(tp[i]) or None,
                }
                for i in range(len(x))
            ]
        out["events"] = self.events
        out["counters"] = self.counters
        if self.search is not None:
            out["search"] = self.search
        return out


@dataclass
class SimTrace:
    header: dict
    steps: list[StepRecord] = field(default_factory=list)
    truncated: bool = False

    @property
    def end_time(self) -> float:
        return self.steps[-1].time if self.steps else 0.0

    def events(self, kind: str | None = None):
        for rec in self.steps:
            for ev in rec.events:
                if kind is None or ev["type"] == kind:
                    yield ev

    def lines(self):
        yield json.dumps({"type": "header", **self.header}, sort_keys=True)
        for rec in self.steps:
            yield json.dumps(rec.to_json(), sort_keys=True)
        yield json.dumps({"type": "footer", "truncated": self.truncated, "steps": len(self.steps)}, sort_keys=True)

    def to_bytes(self) -> bytes:
        return ("\n".join(self.lines()) + "\n").encode()

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    @classmethod
    def read(cls, path) -> "SimTrace":
        header, steps, truncated = {}, [], False
        with open(path) as fh:
            for line in fh:
                obj = json.loads(line)
                kind = obj.get("type")
                if kind == "header":
                    header = {k: v for k, v in obj.items() if k != "type"}
                elif kind == "footer":
                    truncated = obj["truncated"]
                else:
                    steps.append(StepRecord(obj["time"], None, obj["events"], obj["counters"], obj.get("search")))
        return cls(header, steps, truncated)


# -- state ------------------------------------------------------------------

class SimState:
    """Mutable world owned by the step loop. Agent data is structure-of-arrays."""

    def __init__(self, world: WorldMap, config: SimConfig, seed: int):
        self.world = world
        self.config = config
        self.seed = int(seed)
        n, m = config.n_agents, world.m
        self.xy = world.xy
        self.rates = world.rates
        self.time = 0.0
        self.step_index = 0
        self.cap = config.passengers_per_agent * n

        self.rng_arrivals = stream(seed, "arrivals")
        self.rng_destinations = stream(seed, "destinations")
        self.rng_levels = stream(seed, "levels")
        start = stream(seed, "init").integers(1, m + 1, size=n)

        self.x = self.xy[start - 1, 0].copy()
        self.y = self.xy[start - 1, 1].copy()
        self.theta = np.zeros(n)
        self.grounded_at = start.astype(int)
        self.carrying = np.zeros(n, dtype=int)
        self.level = np.ones(n, dtype=int)
        self.target_pax = np.zeros(n, dtype=int)
        self.target_vp = np.zeros(n, dtype=int)
        self.held = np.zeros(n, dtype=bool)

        self.passengers: list[Passenger] = []
        self.waiting: list[list[int]] = [[] for _ in range(m)]
        self.n_waiting = 0
        self.delivered = 0
        self.conflicts = ConflictReport()
        self.los_events = 0
        self.nmac_events = 0
        self.terminated = False
        self.truncated = False
        self._match_key = None
        self._paths: dict = {}

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def spawned(self) -> int:
        return len(self.passengers)

    def pax(self, pid: int) -> Passenger:
        return self.passengers[pid - 1]

    def waiting_ids(self) -> list[int]:
        return sorted(pid for q in self.waiting for pid in q)

    def dump(self) -> dict:
        return {
            "time": self.time,
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "grounded_at": self.grounded_at.tolist(),
            "carrying": self.carrying.tolist(),
            "target_pax": self.target_pax.tolist(),
            "waiting": [list(q) for q in self.waiting],
            "spawned": self.spawned,
            "delivered": self.delivered,
        }


# -- phases -----------------------------------------------------------------

def spawn_passengers(state: SimState, now: float) -> list[dict]:
    """Poisson arrivals at every vertiport, destinations uniform over the others.

    Counts are drawn for all vertiports every step until the cap is reached,
    so the arrival streams do not depend on planning choices.
    """
    if state.spawned >= state.cap:
        return []
    dt = state.config.params.dt
    counts = state.rng_arrivals.poisson(state.rates * dt / 3600.0)
    m = len(counts)
    events = []
    for k, c in enumerate(counts, start=1):
        for _ in range(int(c)):
            if state.spawned >= state.cap:
                break
            d = int(state.rng_destinations.integers(1, m))
            if d >= k:
                d += 1
            pid = state.spawned + 1
            state.passengers.append(Passenger(pid, k, d, now))
            state.waiting[k - 1].append(pid)
            state.n_waiting += 1
            events.append({"type": "spawn", "time": now, "passenger": pid, "origin": k, "destination": d})
    return events


def _fallback_terminals(state: SimState) -> np.ndarray:
    term = np.where(state.grounded_at > 0, state.grounded_at, 0)
    carrying = state.carrying > 0
    if carrying.any():
        term[carrying] = [state.pax(p).destination for p in state.carrying[carrying]]
    flying_free = (term == 0)
    if flying_free.any():
        term[flying_free] = nearest_vertiport(state.x[flying_free], state.y[flying_free], state.xy)
    return term


def _assign_proposed(state: SimState, waiting: list[int]) -> None:
    key = (tuple(waiting), state.carrying.tobytes())
    if key == state._match_key and not state.config.rematch_every_step:
        return
    state._match_key = key
    state.target_pax[:] = 0
    if not waiting:
        return
    dests = np.array([state.pax(p).destination for p in waiting])
    origins = np.array([state.pax(p).origin for p in waiting])
    carry_dest = np.zeros(state.n, dtype=int)
    carrying = state.carrying > 0
    if carrying.any():
        carry_dest[carrying] = [state.pax(p).destination for p in state.carrying[carrying]]
    values = cost_values(state.x, state.y, carry_dest, origins, state.xy)
    cm = CostMatrix(values, list(range(state.n)), list(range(len(waiting))))
    cands = murty_k_best(cm, state.config.k)
    fallback = _fallback_terminals(state)
    rates = state.rates
    psi_star = state.n * rates / rates.sum() if rates.sum() > 0 else np.full(len(rates), state.n / len(rates))
    best, best_score = None, math.inf
    for cand in cands:
        term = fallback.copy()
        if cand.assignment:
            agents = np.fromiter(cand.assignment.keys(), dtype=int)
            cols = np.fromiter(cand.assignment.values(), dtype=int)
            term[agents] = dests[cols]
        cand.psi = np.bincount(term - 1, minlength=len(rates)).astype(float)
        score = float(np.abs(psi_star - cand.psi).sum())
        if score < best_score:
            best, best_score = cand, score
    for a, col in best.assignment.items():
        state.target_pax[a] = waiting[col]


def _assign_greedy(state: SimState, waiting: list[int]) -> None:
    state.target_pax[:] = 0
    if not waiting:
        return
    free = np.flatnonzero(state.carrying == 0)
    if free.size == 0:
        return
    origins = np.array([state.pax(p).origin for p in waiting]) - 1
    ox, oy = state.xy[origins, 0], state.xy[origins, 1]
    d = np.hypot(ox[None, :] - state.x[free, None], oy[None, :] - state.y[free, None])
    best = np.argmin(d, axis=1)
    state.target_pax[free] = np.asarray(waiting)[best]


def _assign_first_dispatch(state: SimState, waiting: list[int]) -> None:
    committed = set(int(p) for p in state.target_pax[state.target_pax > 0])
    free = np.flatnonzero((state.carrying == 0) & (state.target_pax == 0))
    open_pax = [p for p in waiting if p not in committed]
    if free.size == 0 or not open_pax:
        return
    origins = np.array([state.pax(p).origin for p in open_pax])
    values = cost_values(state.x[free], state.y[free], np.zeros(free.size, dtype=int), origins, state.xy)
    match = hungarian_solve(CostMatrix(values, free.tolist(), open_pax))
    for a, p in match.assignment.items():
        state.target_pax[a] = p


def _resolve_targets(state: SimState) -> None:
    tv = np.zeros(state.n, dtype=int)
    for i in range(state.n):
        if state.carrying[i]:
            tv[i] = state.pax(state.carrying[i]).destination
        elif state.target_pax[i]:
            tv[i] = state.pax(state.target_pax[i]).origin
    idle_air = (tv == 0) & (state.grounded_at == 0)
    if idle_air.any():
        tv[idle_air] = nearest_vertiport(state.x[idle_air], state.y[idle_air], state.xy)
    state.target_vp = tv


def _fleet_view(state: SimState, ready: np.ndarray) -> FleetView:
    has = state.target_vp > 0
    idx = np.where(has, state.target_vp, 1) - 1
    tx = np.where(has, state.xy[idx, 0], np.nan)
    ty = np.where(has, state.xy[idx, 1], np.nan)
    return FleetView(
        ids=np.arange(state.n),
        x=state.x,
        y=state.y,
        theta=state.theta,
        flying=state.grounded_at == 0,
        level=state.level,
        tx=tx,
        ty=ty,
        ready=ready,
    )


def _departure_path(state: SimState, origin: int, target: int) -> list:
    """Greedy path from a takeoff at ``origin`` to ``target``, cached per pair."""
    key = (origin, target)
    path = state._paths.get(key)
    if path is None:
        p = state.config.params
        x, y = state.xy[origin - 1]
        tx, ty = state.xy[target - 1]
        theta = math.atan2(ty - y, tx - x)
        path = [(float(x), float(y))]
        step = p.v * p.dt
        while len(path) < state.config.phi:
            if math.hypot(tx - x, ty - y) <= p.d_land:
                break
            err = wrap_pi(math.atan2(ty - y, tx - x) - theta)
            theta = theta + max(-p.omega_max, min(p.omega_max, err / p.dt)) * p.dt
            theta %= 2 * math.pi
            x = x + step * math.cos(theta)
            y = y + step * math.sin(theta)
            path.append((float(x), float(y)))
        state._paths[key] = path
    return path


def _select_levels(state: SimState, ready: np.ndarray, now: float) -> list[dict]:
    cfg = state.config
    events = []
    state.held[:] = False
    idx = np.flatnonzero(ready)
    if idx.size == 0:
        return events
    if cfg.level_method == "random":
        for i in idx:
            state.level[i] = random_level_baseline(cfg.flight_levels, state.rng_levels).level
        return events
    view = _fleet_view(state, np.zeros(state.n, dtype=bool))
    stack = build_density_stack(
        view,
        state.world,
        cfg.params,
        phi=cfg.phi,
        levels=cfg.flight_levels,
        cells=cfg.grid_cells,
        sigma0=cfg.sigma0,
        sigma_rate=cfg.sigma_rate,
    )
    for i in idx:
        path = _departure_path(state, int(state.grounded_at[i]), int(state.target_vp[i]))
        decision = select_flight_level(path, stack, cfg.hold_threshold)
        if isinstance(decision, Fly):
            state.level[i] = decision.level
        else:
            ready[i] = False
            state.held[i] = True
            events.append({"type": "hold", "time": now, "agent": int(i), "risk": round(decision.min_risk, 9)})
    return events


def _check(state: SimState) -> None:
    onboard = int(np.count_nonzero(state.carrying))
    if state.spawned != state.n_waiting + onboard + state.delivered:
        raise SimulationAbort("passenger conservation violated", state.dump())
    carried = state.carrying[state.carrying > 0]
    if carried.size != np.unique(carried).size:
        raise SimulationAbort("a passenger is carried by two agents", state.dump())
    grounded = state.grounded_at > 0
    if grounded.any():
        gp = state.xy[state.grounded_at[grounded] - 1]
        if not (np.allclose(gp[:, 0], state.x[grounded]) and np.allclose(gp[:, 1], state.y[grounded])):
            raise SimulationAbort("grounded agent away from its vertiport", state.dump())


def step(state: SimState) -> list[dict]:
    """Advance the simulation by one timestep; returns the step's events."""
    if state.terminated:
        raise RuntimeError("simulation already terminated")
    cfg = state.config
    p = cfg.params
    now = state.time + p.dt
    events = spawn_passengers(state, now)

    waiting = state.waiting_ids()
    if cfg.assignment == "proposed":
        _assign_proposed(state, waiting)
    elif cfg.assignment == "greedy":
        _assign_greedy(state, waiting)
    else:
        _assign_first_dispatch(state, waiting)
    _resolve_targets(state)

    grounded = state.grounded_at > 0
    ready = grounded & (state.target_vp > 0) & (state.target_vp != state.grounded_at)
    events += _select_levels(state, ready, now)

    view = _fleet_view(state, ready)
    search_log = None
    if cfg.trajectory == "mcts":
        clusters = find_conflict_clusters(view, p, cfg.search.lookahead_s)
        search_log = []
        joint = mcts_plan(view, clusters, cfg.search, p, seed=state.seed, timestep=state.step_index, diagnostics=search_log)
    else:
        joint = greedy_arrays(view, p)

    # kinematics
    fly = joint.kind == FLY
    if fly.any():
        state.x[fly], state.y[fly], state.theta[fly] = advance_flying(
            state.x[fly], state.y[fly], state.theta[fly], joint.omega[fly], p
        )
    for i in np.flatnonzero(joint.kind == TAKEOFF):
        state.grounded_at[i] = 0
        state.theta[i] = joint.theta_takeoff[i]
        carried = int(state.carrying[i])
        events.append({
            "type": "takeoff", "time": now, "agent": int(i),
            "passenger": carried or None, "level": int(state.level[i]),
        })
    landed = np.flatnonzero(joint.kind == LAND)
    for i in landed:
        vp = int(state.target_vp[i])
        state.x[i], state.y[i] = state.xy[vp - 1]
        state.grounded_at[i] = vp
        events.append({"type": "land", "time": now, "agent": int(i), "vertiport": vp})

    # boarding and delivery
    for i in landed:
        pid = int(state.carrying[i])
        if pid and state.pax(pid).destination == state.grounded_at[i]:
            state.pax(pid).deliver_time = now
            state.carrying[i] = 0
            state.delivered += 1
            events.append({"type": "deliver", "time": now, "agent": int(i), "passenger": pid})
    for i in np.flatnonzero((state.grounded_at > 0) & (state.carrying == 0) & (state.target_pax > 0)):
        pid = int(state.target_pax[i])
        pax = state.pax(pid)
        if not pax.waiting:
            state.target_pax[i] = 0
            continue
        if pax.origin != state.grounded_at[i]:
            continue
        # passengers at one vertiport board first come, first served; an
        # agent that was headed for the queue head takes over this target
        queue = state.waiting[pax.origin - 1]
        head = queue[0]
        if head != pid:
            state.target_pax[state.target_pax == head] = pid
            pid, pax = head, state.pax(head)
        queue.pop(0)
        state.n_waiting -= 1
        pax.board_time = now
        state.carrying[i] = pid
        state.target_pax[i] = 0
        state.target_vp[i] = pax.destination
        events.append({"type": "board", "time": now, "agent": int(i), "passenger": pid})

    # conflicts
    flying = state.grounded_at == 0
    los = close_pairs(state.x, state.y, state.level, flying, p.los_radius)
    nmac = close_pairs(state.x, state.y, state.level, flying, p.nmac_radius) if los else []
    report = ConflictReport.from_pairs(los, nmac, state.conflicts)
    if report.new_los_events or report.new_nmac_events:
        for a, b in sorted(report.los_pairs - state.conflicts.los_pairs):
            events.append({"type": "los_enter", "time": now, "agents": [a, b]})
        for a, b in sorted(report.nmac_pairs - state.conflicts.nmac_pairs):
            events.append({"type": "nmac_enter", "time": now, "agents": [a, b]})
    state.conflicts = report
    state.los_events += report.new_los_events
    state.nmac_events += report.new_nmac_events

    state.time = now
    state.step_index += 1
    _check(state)
    if state.delivered >= state.cap:
        state.terminated = True
    state._last_search = search_log
    return events


def _record(state: SimState, events: list) -> StepRecord:
    agents = None
    if state.config.record_agents:
        agents = (
            state.x.copy(), state.y.copy(), state.theta.copy(), state.grounded_at.copy(),
            state.carrying.copy(), state.level.copy(), state.target_vp.copy(), state.target_pax.copy(),
        )
    counters = {
        "spawned": state.spawned,
        "delivered": state.delivered,
        "waiting": state.n_waiting,
        "los": state.los_events,
        "nmac": state.nmac_events,
    }
    search = state._last_search if state.config.trajectory == "mcts" and state._last_search else None
    return StepRecord(state.time, agents, events, counters, search)


def make_header(world: WorldMap, config: SimConfig, seed: int) -> dict:
    return {
        "schema_version": TRACE_SCHEMA_VERSION,
        "build": build_id(),
        "seed": int(seed),
        "config": config.to_dict(),
        "map": world.to_dict(),
    }


def run(config: SimConfig, world: WorldMap, seed: int, keep_trace: bool = True):
    """Simulate until every passenger is delivered or ``max_steps`` pass.

    Returns (SimTrace, MetricsSummary). Hitting ``max_steps`` marks both as
    truncated.
    """
    state = SimState(world, config, seed)
    trace = SimTrace(make_header(world, config, seed))
    while not state.terminated and state.step_index < config.max_steps:
        events = step(state)
        if keep_trace:
            trace.steps.append(_record(state, events))
        else:
            trace.steps.append(StepRecord(state.time, None, events, {}))
    trace.truncated = not state.terminated
    return trace, compute_metrics(trace)


# -- metrics ----------------------------------------------------------------

@dataclass
class MetricsSummary:
    nmac_per_hr_agent: float
    los_per_hr_agent: float
    passengers_per_hr_agent: float
    avg_wait_s: float
    max_wait_s: float
    trip_ratio_mean: float
    sim_duration_s: float
    n_agents: int
    delivered: int
    spawned: int
    los_events: int
    nmac_events: int
    holds: int
    truncated: bool
    seed: int
    config: dict
    schema_version: int = TRACE_SCHEMA_VERSION
    build: str = ""

    METRICS = (
        "nmac_per_hr_agent",
        "los_per_hr_agent",
        "passengers_per_hr_agent",
        "avg_wait_s",
        "max_wait_s",
        "trip_ratio_mean",
        "sim_duration_s",
    )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def csv_header(self) -> str:
        return ",".join(self._csv_fields())

    def csv_row(self) -> str:
        d = self.to_dict()
        vals = []
        for k in self._csv_fields():
            v = d[k] if k != "config" else json.dumps(d["config"], sort_keys=True)
            s = repr(v) if isinstance(v, float) else str(v)
            vals.append('"' + s.replace('"', '""') + '"' if ("," in s or '"' in s) else s)
        return ",".join(vals)

    def _csv_fields(self):
        return [f.name for f in fields(self)]


def trip_ratios(trace: SimTrace) -> list[tuple[float, float]]:
    """(ratio, lower bound) per delivery.

    Realized time runs from boarding to the delivering landing, so it covers
    the takeoff step and any hold on the ground with the passenger aboard.
    The minimum is the straight-line distance at cruise speed; the bound
    allows for landing up to ``d_land`` early.
    """
    hdr = trace.header
    xy = np.array([(v["x"], v["y"]) for v in hdr["map"]["vertiports"]])
    params = hdr["config"]["params"]
    v, d_land = params["v"], params["d_land"]
    od, boarded = {}, {}
    out = []
    for ev in trace.events():
        kind = ev["type"]
        if kind == "spawn":
            od[ev["passenger"]] = (ev["origin"], ev["destination"])
        elif kind == "board":
            boarded[ev["passenger"]] = ev["time"]
        elif kind == "deliver":
            pid = ev["passenger"]
            o, d = od[pid]
            dist = float(np.hypot(*(xy[d - 1] - xy[o - 1])))
            out.append(((ev["time"] - boarded[pid]) / (dist / v), 1.0 - d_land / dist))
    return out


def compute_metrics(trace: SimTrace) -> MetricsSummary:
    if not trace.steps:
        raise ValueError("empty trace")
    hdr = trace.header
    n = hdr["config"]["n_agents"]
    end = trace.end_time
    hours = end / 3600.0
    spawn, board = {}, {}
    los = nmac = holds = delivered = 0
    for ev in trace.events():
        t = ev["type"]
        if t == "spawn":
            spawn[ev["passenger"]] = ev["time"]
        elif t == "board":
            board[ev["passenger"]] = ev["time"]
        elif t == "los_enter":
            los += 1
        elif t == "nmac_enter":
            nmac += 1
        elif t == "hold":
            holds += 1
        elif t == "deliver":
            delivered += 1
    waits = [board.get(pid, end) - t0 for pid, t0 in spawn.items()]
    ratios = [r for r, _ in trip_ratios(trace)]
    return MetricsSummary(
        nmac_per_hr_agent=nmac / (hours * n) if hours > 0 else 0.0,
        los_per_hr_agent=los / (hours * n) if hours > 0 else 0.0,
        passengers_per_hr_agent=delivered / (hours * n) if hours > 0 else 0.0,
        avg_wait_s=float(np.mean(waits)) if waits else 0.0,
        max_wait_s=float(np.max(waits)) if waits else 0.0,
        trip_ratio_mean=float(np.mean(ratios)) if ratios else float("nan"),
        sim_duration_s=end,
        n_agents=n,
        delivered=delivered,
        spawned=len(spawn),
        los_events=los,
        nmac_events=nmac,
        holds=holds,
        truncated=trace.truncated,
        seed=hdr.get("seed", 0),
        config=hdr["config"],
        build=hdr.get("build", ""),
    )
