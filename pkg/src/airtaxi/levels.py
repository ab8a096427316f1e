"""Flight-level selection from predicted traffic density.

For every level and lookahead step a 2D grid holds the predicted positions
of airborne agents, each spread as a Gaussian whose width grows with the
step index. A departing agent's route risk on a level is the density summed
along its own greedy path; it takes the least risky level, or holds on the
ground when every level is too busy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mapgen import WorldMap
from .trajectory import FleetView, apply_joint, greedy_arrays, RolloutState, rollout_greedy_action
from .world import KinematicParams


@dataclass(frozen=True)
class Fly:
    level: int
    risk: float


@dataclass(frozen=True)
class Hold:
    min_risk: float


@dataclass
class DensityStack:
    """``grids[level - 1, step - 1]`` is a (cells, cells) density grid.

    Cell (r, c) covers ``origin + (c, r) * cell_size`` to one cell further;
    values are predicted agent mass per cell. Kernel widths are in cells.
    """
    grids: np.ndarray
    origin: tuple[float, float]
    cell_size: float
    sigma0: float = 1.0
    sigma_rate: float = 0.25
    truncate: float = 3.0

    @classmethod
    def empty(cls, world: WorldMap, levels: int, phi: int, cells: int = 128, **kw) -> "DensityStack":
        if phi < 1:
            raise ValueError("phi must be >= 1")
        return cls(
            np.zeros((levels, phi, cells, cells)),
            tuple(world.origin),
            world.side_length / cells,
            **kw,
        )

    @property
    def levels(self) -> int:
        return self.grids.shape[0]

    @property
    def phi(self) -> int:
        return self.grids.shape[1]

    def grid(self, level: int, step: int) -> np.ndarray:
        return self.grids[level - 1, step - 1]

    def sigma(self, step: int) -> float:
        return self.sigma0 + self.sigma_rate * step

    def _to_cells(self, x, y):
        gx = (np.asarray(x, dtype=float) - self.origin[0]) / self.cell_size - 0.5
        gy = (np.asarray(y, dtype=float) - self.origin[1]) / self.cell_size - 0.5
        return gx, gy

    def deposit(self, level: int, step: int, x, y) -> None:
        """Add one unit-mass kernel per point at ``(x, y)`` on a level/step grid."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if x.size == 0:
            return
        sigma = self.sigma(step)
        reach = self.truncate * sigma
        half = int(math.ceil(reach)) + 1
        offs = np.arange(-half, half + 1)
        gx, gy = self._to_cells(x, y)
        cx = np.floor(gx).astype(int)[:, None] + offs[None, :]
        cy = np.floor(gy).astype(int)[:, None] + offs[None, :]
        wx = _weights(cx - gx[:, None], sigma, reach)
        wy = _weights(cy - gy[:, None], sigma, reach)
        h, w = self.grids.shape[2:]
        kern = wy[:, :, None] * wx[:, None, :]
        inside = ((cy >= 0) & (cy < h))[:, :, None] & ((cx >= 0) & (cx < w))[:, None, :]
        flat = (np.clip(cy, 0, h - 1)[:, :, None] * w + np.clip(cx, 0, w - 1)[:, None, :])
        add = np.bincount(flat[inside], weights=kern[inside], minlength=h * w)
        self.grids[level - 1, step - 1] += add.reshape(h, w)

    def deposit_path(self, level: int, path) -> None:
        """Deposit a predicted path; ``path[s - 1]`` is the step-s point or None."""
        for s, pt in enumerate(path[: self.phi], start=1):
            if pt is not None:
                self.deposit(level, s, pt[0], pt[1])

    def sample(self, level: int, step: int, x: float, y: float) -> float:
        """Bilinear interpolation between cell centers; zero outside the grid."""
        g = self.grids[level - 1, step - 1]
        gx, gy = self._to_cells(x, y)
        gx, gy = float(gx), float(gy)
        c0, r0 = math.floor(gx), math.floor(gy)
        fx, fy = gx - c0, gy - r0
        h, w = g.shape
        total = 0.0
        for dr, wr in ((0, 1 - fy), (1, fy)):
            r = r0 + dr
            if not 0 <= r < h or wr == 0:
                continue
            for dc, wc in ((0, 1 - fx), (1, fx)):
                c = c0 + dc
                if 0 <= c < w and wc != 0:
                    total += wr * wc * g[r, c]
        return total


def _weights(offset: np.ndarray, sigma: float, reach: float) -> np.ndarray:
    w = np.exp(-0.5 * (offset / sigma) ** 2)
    w[np.abs(offset) > reach] = 0.0
    return w / w.sum(axis=1, keepdims=True)


def predict_paths(view: FleetView, params: KinematicParams, steps: int):
    """Greedy positions of every agent for ``steps`` steps.

    Returns (xs, ys, active) of shape (n, steps); ``active`` is False once an
    agent is on the ground (after landing, or never airborne).
    """
    n = len(view)
    xs = np.zeros((n, steps))
    ys = np.zeros((n, steps))
    active = np.zeros((n, steps), dtype=bool)
    st = RolloutState.of(view)
    act = greedy_arrays(view, params)
    for s in range(steps):
        st = apply_joint(view, st, act, params)
        xs[:, s], ys[:, s] = st.x, st.y
        active[:, s] = st.flying
        act = rollout_greedy_action(view, st, params)
    return xs, ys, active


def build_density_stack(
    view: FleetView,
    world: WorldMap,
    params: KinematicParams,
    phi: int = 20,
    levels: int | None = None,
    cells: int = 128,
    sigma0: float = 1.0,
    sigma_rate: float = 0.25,
) -> DensityStack:
    """Density of airborne agents rolled forward greedily toward their targets."""
    levels = levels or world.flight_levels
    stack = DensityStack.empty(world, levels, phi, cells, sigma0=sigma0, sigma_rate=sigma_rate)
    airborne = np.flatnonzero(view.flying)
    if airborne.size == 0:
        return stack
    sub = view.subset(airborne)
    xs, ys, active = predict_paths(sub, params, phi)
    for lvl in np.unique(sub.level):
        on = sub.level == lvl
        for s in range(phi):
            sel = on & active[:, s]
            if sel.any():
                stack.deposit(int(lvl), s + 1, xs[sel, s], ys[sel, s])
    return stack


def departure_path(x: float, y: float, tx: float, ty: float, params: KinematicParams, steps: int):
    """Greedy path of an agent taking off from (x, y) toward (tx, ty).

    The first point is the vertiport itself (the takeoff step); the path
    ends when the agent lands.
    """
    view = FleetView(
        ids=np.array([0]),
        x=np.array([x]),
        y=np.array([y]),
        theta=np.array([0.0]),
        flying=np.array([False]),
        level=np.array([1]),
        tx=np.array([tx]),
        ty=np.array([ty]),
        ready=np.array([True]),
    )
    xs, ys, active = predict_paths(view, params, steps)
    return [(float(xs[0, s]), float(ys[0, s])) for s in range(steps) if active[0, s]]


def route_risk(stack: DensityStack, level: int, trajectory) -> float:
    """Density summed along a path; point s is read from the step-s grid."""
    if not 1 <= level <= stack.levels:
        raise ValueError(f"level {level} outside 1..{stack.levels}")
    return float(sum(stack.sample(level, s, px, py) for s, (px, py) in enumerate(trajectory[: stack.phi], start=1)))


def select_flight_level(path, stack: DensityStack, hold_threshold: float):
    """Least-risk level for a departing agent's ``path``, or Hold.

    On Fly the path is deposited into the chosen level so later departures
    see it. Ties go to the lowest level.
    """
    if path is None:
        raise ValueError("agent has no target")
    risks = [route_risk(stack, lvl, path) for lvl in range(1, stack.levels + 1)]
    best = int(np.argmin(risks))
    if risks[best] > hold_threshold:
        return Hold(min_risk=risks[best])
    stack.deposit_path(best + 1, path)
    return Fly(level=best + 1, risk=risks[best])


def random_level_baseline(levels: int, rng: np.random.Generator) -> Fly:
    """Uniformly random level; never holds."""
    return Fly(level=int(rng.integers(1, levels + 1)), risk=float("nan"))


def export_stack(stack: DensityStack, directory, fmt: str = "bin") -> list[Path]:
    """Write the stack for heatmap rendering.

    ``bin``: ``stack.bin`` (float64, C order, shape levels x phi x rows x
    cols, row 0 = south) plus ``stack.json`` header. ``csv``: one file per
    grid named ``level{L}_step{S}.csv`` with the northern row first.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    header = {
        "shape": list(stack.grids.shape),
        "dtype": "float64",
        "byte_order": "little",
        "origin": list(stack.origin),
        "cell_size": stack.cell_size,
        "sigma0_cells": stack.sigma0,
        "sigma_rate_cells": stack.sigma_rate,
        "row0": "south",
    }
    if fmt == "bin":
        stack.grids.astype("<f8").tofile(out / "stack.bin")
        (out / "stack.json").write_text(json.dumps(header, indent=2) + "\n")
        return [out / "stack.bin", out / "stack.json"]
    if fmt == "csv":
        files = []
        for lvl in range(1, stack.levels + 1):
            for s in range(1, stack.phi + 1):
                f = out / f"level{lvl}_step{s}.csv"
                np.savetxt(f, stack.grid(lvl, s)[::-1], delimiter=",", fmt="%.10g")
                files.append(f)
        return files
    raise ValueError(f"unknown export format {fmt!r}")


def load_stack(directory) -> DensityStack:
    d = Path(directory)
    header = json.loads((d / "stack.json").read_text())
    grids = np.fromfile(d / "stack.bin", dtype="<f8").reshape(header["shape"])
    return DensityStack(
        grids,
        tuple(header["origin"]),
        header["cell_size"],
        header["sigma0_cells"],
        header["sigma_rate_cells"],
    )
