"""Core domain types, kinematics and conflict geometry.

Agent ids are 0-based. Vertiport and passenger ids are 1-based so that 0 can
mean "flying" / "empty" in the agent configuration, as in the problem
statement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class ContractViolation(ValueError):
    """An operation was called with arguments outside its contract."""


class RejectedAction(ValueError):
    """A well-formed action that is not legal in the current state."""


def wrap_heading(theta: float) -> float:
    """Normalize an angle to [0, 2*pi)."""
    t = math.fmod(theta, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    if t >= TWO_PI:
        t = 0.0
    return t


def wrap_heading_array(theta: np.ndarray) -> np.ndarray:
    t = np.mod(theta, TWO_PI)
    t[t >= TWO_PI] = 0.0
    return t


def wrap_pi(angle):
    """Signed angle difference in [-pi, pi). Works on scalars and arrays."""
    return (angle + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class KinematicParams:
    v: float = 0.09  # km/s
    dt: float = 10.0  # s
    omega_max: float = 0.04  # rad/s
    d_land: float = 1.7  # km
    los_radius: float = 0.926  # km
    nmac_radius: float = 0.15  # km

    def __post_init__(self):
        for name in ("v", "dt", "omega_max", "d_land", "los_radius", "nmac_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.nmac_radius < self.los_radius < self.d_land:
            raise ValueError("expected nmac_radius < los_radius < d_land")

    @property
    def step_length(self) -> float:
        return self.v * self.dt


@dataclass(frozen=True)
class AgentState:
    id: int
    x: float
    y: float
    theta: float = 0.0
    grounded_at: int = 0
    carrying: int = 0
    flight_level: int = 1
    target_passenger: int | None = None
    target_vertiport: int | None = None

    @property
    def flying(self) -> bool:
        return self.grounded_at == 0


@dataclass(frozen=True)
class Flying:
    omega: float = 0.0
    land: bool = False


@dataclass(frozen=True)
class Grounded:
    theta_takeoff: float = 0.0
    stay: bool = True


AgentAction = Flying | Grounded


@dataclass
class Passenger:
    id: int
    origin: int
    destination: int
    spawn_time: float
    board_time: float | None = None
    deliver_time: float | None = None

    def __post_init__(self):
        if self.origin == self.destination:
            raise ContractViolation("passenger origin equals destination")

    @property
    def waiting(self) -> bool:
        return self.board_time is None


def step_kinematics(
    state: AgentState,
    action: AgentAction,
    params: KinematicParams,
    ports: Mapping[int, tuple[float, float]] | None = None,
) -> AgentState:
    """Advance one agent by one timestep.

    Flying agents turn first and then translate along the new heading.
    Landing snaps the agent onto its target vertiport, which must be within
    ``d_land``; ``ports`` maps vertiport id to position and is only needed
    for landing.
    """
    if isinstance(action, Flying):
        if not state.flying:
            raise ContractViolation("flying action given to a grounded agent")
        if abs(action.omega) > params.omega_max + 1e-12:
            raise ContractViolation(f"|omega|={abs(action.omega)} exceeds omega_max")
        if action.land:
            port = state.target_vertiport
            if port is None or ports is None or port not in ports:
                raise RejectedAction("landing requires a known target vertiport")
            px, py = ports[port]
            if math.hypot(px - state.x, py - state.y) > params.d_land:
                raise RejectedAction(
                    f"agent {state.id} is outside d_land of vertiport {port}"
                )
            return replace(state, x=px, y=py, grounded_at=port)
        theta = wrap_heading(state.theta + action.omega * params.dt)
        step = params.v * params.dt
        return replace(
            state,
            theta=theta,
            x=state.x + step * math.cos(theta),
            y=state.y + step * math.sin(theta),
        )
    if isinstance(action, Grounded):
        if state.flying:
            raise ContractViolation("grounded action given to a flying agent")
        if action.stay:
            return state
        return replace(state, theta=wrap_heading(action.theta_takeoff), grounded_at=0)
    raise ContractViolation(f"unknown action {action!r}")


def advance_flying(x, y, theta, omega, params: KinematicParams):
    """Vectorized flying update; same formulas as :func:`step_kinematics`."""
    theta = wrap_heading_array(theta + omega * params.dt)
    step = params.v * params.dt
    return x + step * np.cos(theta), y + step * np.sin(theta), theta


def close_pairs(
    x: np.ndarray, y: np.ndarray, level: np.ndarray, flying: np.ndarray, radius: float
) -> list[tuple[int, int]]:
    """Index pairs (i < j) of flying agents on one level closer than ``radius``."""
    idx = np.flatnonzero(flying)
    if idx.size < 2:
        return []
    px, py, pl = x[idx], y[idx], level[idx]
    dx = px[:, None] - px[None, :]
    dy = py[:, None] - py[None, :]
    near = (dx * dx + dy * dy < radius * radius) & (pl[:, None] == pl[None, :])
    a, b = np.nonzero(np.triu(near, 1))
    return [(int(idx[i]), int(idx[j])) for i, j in zip(a, b)]


@dataclass(frozen=True)
class ConflictReport:
    los_pairs: frozenset = field(default_factory=frozenset)
    nmac_pairs: frozenset = field(default_factory=frozenset)
    new_los_events: int = 0
    new_nmac_events: int = 0

    @classmethod
    def from_pairs(cls, los, nmac, previous: "ConflictReport | None" = None):
        los = frozenset(los)
        nmac = frozenset(nmac)
        prev = previous or cls()
        return cls(
            los_pairs=los,
            nmac_pairs=nmac,
            new_los_events=len(los - prev.los_pairs),
            new_nmac_events=len(nmac - prev.nmac_pairs),
        )


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def detect_conflicts(
    agents: Sequence[AgentState],
    params: KinematicParams,
    previous: ConflictReport | None = None,
) -> ConflictReport:
    """LOS/NMAC pairs among flying agents sharing a flight level.

    Pairs are keyed by unordered agent id. An event is counted when a pair
    enters the state, i.e. it is present now and absent from ``previous``.
    """
    if not agents:
        return ConflictReport.from_pairs((), (), previous)
    ids = [a.id for a in agents]
    x = np.array([a.x for a in agents], dtype=float)
    y = np.array([a.y for a in agents], dtype=float)
    level = np.array([a.flight_level for a in agents])
    flying = np.array([a.flying for a in agents])
    los = [_pair(ids[i], ids[j]) for i, j in close_pairs(x, y, level, flying, params.los_radius)]
    nmac = [_pair(ids[i], ids[j]) for i, j in close_pairs(x, y, level, flying, params.nmac_radius)]
    return ConflictReport.from_pairs(los, nmac, previous)


def reward(delivered_count: int, new_conflict_count: int, gamma: float) -> float:
    """Shared per-step reward: deliveries minus penalized conflicts."""
    if delivered_count < 0 or new_conflict_count < 0:
        raise ContractViolation("counts must be non-negative")
    if gamma < 0:
        raise ContractViolation("gamma must be non-negative")
    return delivered_count - gamma * new_conflict_count


def ports_of(vertiports: Iterable) -> dict[int, tuple[float, float]]:
    return {vp.id: (vp.x, vp.y) for vp in vertiports}
