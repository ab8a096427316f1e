"""Population rasters, vertiport placement and arrival-rate calibration.

Grids are stored with row 0 at the southern edge so that cell (r, c) has its
center at ``origin + ((c + 0.5) * cell_size, (r + 0.5) * cell_size)``. Both
file formats list the northern row first, like an image.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .world import KinematicParams

MAP_SCHEMA_VERSION = 1


class GridLoadError(ValueError):
    pass


class MapGenerationError(ValueError):
    pass


@dataclass
class PopulationGrid:
    density: np.ndarray  # (height, width), persons per cell
    cell_size: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float)
        if self.density.ndim != 2:
            raise GridLoadError("density must be two-dimensional")
        if not np.all(np.isfinite(self.density)):
            raise GridLoadError("density contains non-finite values")
        if np.any(self.density < 0):
            r, c = np.argwhere(self.density < 0)[0]
            raise GridLoadError(f"negative density at row {r}, column {c}")
        if self.cell_size <= 0:
            raise GridLoadError("cell_size must be positive")

    @property
    def height(self) -> int:
        return self.density.shape[0]

    @property
    def width(self) -> int:
        return self.density.shape[1]

    @property
    def total(self) -> float:
        return float(self.density.sum())

    @property
    def side_length(self) -> float:
        return max(self.width, self.height) * self.cell_size

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.origin[0] + (col + 0.5) * self.cell_size,
            self.origin[1] + (row + 0.5) * self.cell_size,
        )


@dataclass
class Vertiport:
    id: int
    x: float
    y: float
    lam: float = 0.0  # passengers per hour
    served_population: float = 0.0
    radius: float = 0.0  # serving-disk radius, km
    waiting: list[int] = field(default_factory=list)


@dataclass
class WorldMap:
    side_length: float
    vertiports: list[Vertiport]
    flight_levels: int = 1
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if len(self.vertiports) < 2:
            raise MapGenerationError("a map needs at least two vertiports")
        pos = {(vp.x, vp.y) for vp in self.vertiports}
        if len(pos) != len(self.vertiports):
            raise MapGenerationError("vertiport positions must be distinct")
        if self.flight_levels < 1:
            raise MapGenerationError("flight_levels must be >= 1")

    @property
    def m(self) -> int:
        return len(self.vertiports)

    def port(self, vid: int) -> Vertiport:
        return self.vertiports[vid - 1]

    @property
    def xy(self) -> np.ndarray:
        """(m, 2) vertiport positions; row k-1 belongs to vertiport k."""
        return np.array([(vp.x, vp.y) for vp in self.vertiports], dtype=float)

    @property
    def rates(self) -> np.ndarray:
        return np.array([vp.lam for vp in self.vertiports], dtype=float)

    def to_dict(self) -> dict:
        return {
            "schema_version": MAP_SCHEMA_VERSION,
            "side_length": self.side_length,
            "origin": list(self.origin),
            "flight_levels": self.flight_levels,
            "vertiports": [
                {
                    "id": vp.id,
                    "x": vp.x,
                    "y": vp.y,
                    "lambda": vp.lam,
                    "served_population": vp.served_population,
                    "radius": vp.radius,
                }
                for vp in self.vertiports
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WorldMap":
        vps = [
            Vertiport(
                id=int(v["id"]),
                x=float(v["x"]),
                y=float(v["y"]),
                lam=float(v["lambda"]),
                served_population=float(v.get("served_population", 0.0)),
                radius=float(v.get("radius", 0.0)),
            )
            for v in data["vertiports"]
        ]
        vps.sort(key=lambda v: v.id)
        if [v.id for v in vps] != list(range(1, len(vps) + 1)):
            raise MapGenerationError("vertiport ids must be 1..m")
        return cls(
            side_length=float(data["side_length"]),
            vertiports=vps,
            flight_levels=int(data.get("flight_levels", 1)),
            origin=tuple(data.get("origin", (0.0, 0.0))),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "WorldMap":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- raster input -----------------------------------------------------------

_ESRI_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")


def _parse_rows(lines: Sequence[str], sep: str | None, first_line: int) -> list[list[float]]:
    rows = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        parts = line.split(sep) if sep else line.split()
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise GridLoadError(f"line {first_line + i}: {exc}") from None
    return rows


def _check_values(values: np.ndarray) -> None:
    # rows are still in file order here (north first)
    bad = ~np.isfinite(values) | (values < 0)
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        raise GridLoadError(
            f"invalid density {values[r, c]} at row {r}, column {c} (file order)"
        )


def _load_esri(path: Path) -> PopulationGrid:
    lines = path.read_text().splitlines()
    header: dict[str, float] = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if len(parts) == 2 and parts[0].lower() in _ESRI_KEYS + ("nodata_value", "xllcenter", "yllcenter"):
            try:
                header[parts[0].lower()] = float(parts[1])
            except ValueError:
                raise GridLoadError(f"line {i + 1}: bad header value {parts[1]!r}") from None
            i += 1
        else:
            break
    missing = [k for k in ("ncols", "nrows", "cellsize") if k not in header]
    if missing:
        raise GridLoadError(f"missing ESRI header keys: {', '.join(missing)}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    cs = header["cellsize"]
    if "xllcorner" in header:
        x0, y0 = header["xllcorner"], header.get("yllcorner", 0.0)
    else:
        x0 = header.get("xllcenter", 0.0) - cs / 2
        y0 = header.get("yllcenter", 0.0) - cs / 2
    flat = [v for row in _parse_rows(lines[i:], None, i + 1) for v in row]
    if len(flat) != ncols * nrows:
        raise GridLoadError(
            f"expected {ncols}x{nrows}={ncols * nrows} values, found {len(flat)}"
        )
    values = np.array(flat, dtype=float).reshape(nrows, ncols)
    if "nodata_value" in header:
        values[values == header["nodata_value"]] = 0.0
    _check_values(values)
    return PopulationGrid(values[::-1].copy(), cell_size=cs, origin=(x0, y0))


def _load_csv(path: Path, cell_size: float | None, origin) -> PopulationGrid:
    sidecar = path.with_suffix(path.suffix + ".json")
    if not sidecar.exists():
        sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    cs = cell_size if cell_size is not None else float(meta.get("cell_size", 1.0))
    org = origin if origin is not None else tuple(meta.get("origin", (0.0, 0.0)))
    with path.open(newline="") as fh:
        raw = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    rows = []
    for i, row in enumerate(raw):
        try:
            rows.append([float(c) for c in row])
        except ValueError as exc:
            raise GridLoadError(f"line {i + 1}: {exc}") from None
    if not rows:
        raise GridLoadError("empty grid")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise GridLoadError(f"ragged rows: widths {sorted(widths)}")
    values = np.array(rows, dtype=float)
    if "width" in meta and "height" in meta:
        if values.shape != (int(meta["height"]), int(meta["width"])):
            raise GridLoadError(
                f"sidecar declares {meta['width']}x{meta['height']}, file is "
                f"{values.shape[1]}x{values.shape[0]}"
            )
    _check_values(values)
    return PopulationGrid(values[::-1].copy(), cell_size=cs, origin=(float(org[0]), float(org[1])))


def load_population_grid(path, format: str | None = None, *, cell_size=None, origin=None) -> PopulationGrid:
    """Read an ESRI ASCII grid (``asc``) or a headerless CSV (``csv``).

    CSV metadata (``cell_size``, ``origin``, optional ``width``/``height``)
    comes from the keyword arguments or a JSON sidecar next to the file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt in ("asc", "esri", "ascii"):
        return _load_esri(path)
    if fmt == "csv":
        return _load_csv(path, cell_size, origin)
    raise GridLoadError(f"unknown grid format {fmt!r}")


# -- synthetic rasters -------------------------------------------------------

@dataclass(frozen=True)
class Blob:
    """Isotropic Gaussian population center; ``weight`` is total persons."""
    x: float
    y: float
    sigma: float
    weight: float


@dataclass(frozen=True)
class SyntheticPopulation:
    side_length: float
    cells: int
    blobs: tuple[Blob, ...] = ()
    floor: float = 0.0  # persons per km^2 everywhere


def _gauss_cell_mass(edges: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    from scipy.special import ndtr

    cdf = ndtr((edges - mu) / sigma)
    return np.diff(cdf)


def synth_population(spec: SyntheticPopulation) -> PopulationGrid:
    """Integrate a Gaussian mixture plus uniform floor over each cell."""
    if not spec.blobs and spec.floor <= 0:
        raise MapGenerationError("synthetic population needs blobs or a positive floor")
    for b in spec.blobs:
        if b.weight < 0 or b.sigma <= 0:
            raise MapGenerationError(f"invalid blob {b}")
    n = spec.cells
    cs = spec.side_length / n
    edges = np.arange(n + 1) * cs
    density = np.full((n, n), spec.floor * cs * cs)
    for b in spec.blobs:
        mx = _gauss_cell_mass(edges, b.x, b.sigma)
        my = _gauss_cell_mass(edges, b.y, b.sigma)
        density += b.weight * np.outer(my, mx)
    return PopulationGrid(density, cell_size=cs)


# Stand-ins for the real rasters; centers loosely follow the metro layouts.
PRESETS: dict[str, SyntheticPopulation] = {
    "uniform40": SyntheticPopulation(40.0, 80, (), floor=100.0),
    "uniform120": SyntheticPopulation(120.0, 120, (), floor=100.0),
    "nyc": SyntheticPopulation(
        40.0,
        80,
        (
            Blob(17.0, 22.0, 2.5, 1.6e6),  # Manhattan
            Blob(21.0, 14.0, 4.0, 2.4e6),  # Brooklyn
            Blob(28.0, 20.0, 5.0, 2.0e6),  # Queens
            Blob(22.0, 31.0, 3.0, 1.3e6),  # Bronx
            Blob(9.0, 18.0, 4.0, 1.0e6),  # Jersey City / Newark
            Blob(9.0, 6.0, 3.5, 0.4e6),  # Staten Island
        ),
        floor=300.0,
    ),
    "bayarea": SyntheticPopulation(
        120.0,
        120,
        (
            Blob(30.0, 82.0, 4.0, 0.9e6),  # San Francisco
            Blob(45.0, 86.0, 6.0, 1.0e6),  # Oakland / Berkeley
            Blob(48.0, 66.0, 9.0, 0.9e6),  # Peninsula / Hayward
            Blob(80.0, 38.0, 9.0, 1.5e6),  # San Jose
            Blob(62.0, 48.0, 7.0, 0.8e6),  # Fremont / Palo Alto
            Blob(38.0, 108.0, 7.0, 0.5e6),  # North Bay
            Blob(75.0, 88.0, 8.0, 0.7e6),  # Contra Costa
        ),
        floor=20.0,
    ),
}


# -- vertiport placement -----------------------------------------------------

def _minimum_disk(remaining: np.ndarray, row: int, col: int, target: float):
    """Smallest integer radius (cells) whose disk holds ``target`` population.

    Membership is by cell-center distance. Returns (radius, mask).
    """
    h, w = remaining.shape
    rr, cc = np.ogrid[:h, :w]
    dist = np.sqrt((rr - row) ** 2 + (cc - col) ** 2)
    flat_d = dist.ravel()
    order = np.argsort(flat_d, kind="stable")
    cum = np.cumsum(remaining.ravel()[order])
    hit = np.flatnonzero(cum >= target * (1 - 1e-12))
    if hit.size:
        radius = math.ceil(flat_d[order[hit[0]]] - 1e-9)
    else:
        radius = math.ceil(flat_d.max())
    return radius, dist <= radius + 1e-9


def place_vertiports(grid: PopulationGrid, m: int, rng: np.random.Generator):
    """Sampling loop behind :func:`generate_vertiports`.

    Returns a list of (x, y, radius_km, served_population) and the remaining
    population grid. Accepts m == 1 so the loop can be checked in isolation.
    """
    total = grid.total
    if m < 1:
        raise MapGenerationError("m must be >= 1")
    if total <= 0:
        raise MapGenerationError("grid has no population")
    vp_pop = total / m
    remaining = grid.density.copy()
    taken = np.zeros(remaining.shape, dtype=bool)
    out = []
    for _ in range(m):
        mass = remaining.sum()
        if mass > 0:
            probs = (remaining / mass).ravel()
        else:
            # everything already served: fall back to unused populated cells
            base = np.where(taken, 0.0, grid.density).ravel()
            if base.sum() <= 0:
                base = (~taken).astype(float).ravel()
            probs = base / base.sum()
        cell = int(rng.choice(probs.size, p=probs))
        row, col = divmod(cell, grid.width)
        radius, mask = _minimum_disk(remaining, row, col, vp_pop)
        served = float(remaining[mask].sum())
        remaining[mask] = 0.0
        taken[row, col] = True
        x, y = grid.cell_center(row, col)
        out.append((x, y, radius * grid.cell_size, served))
    return out, remaining


def generate_vertiports(grid: PopulationGrid, m: int, rng: np.random.Generator, flight_levels: int = 1) -> WorldMap:
    """Density-weighted vertiport layout with population-serving disks."""
    if m <= 1:
        raise MapGenerationError("m must be at least 2")
    placed, _ = place_vertiports(grid, m, rng)
    vps = [
        Vertiport(id=i + 1, x=x, y=y, radius=r, served_population=pop)
        for i, (x, y, r, pop) in enumerate(placed)
    ]
    return WorldMap(
        side_length=grid.side_length,
        vertiports=vps,
        flight_levels=flight_levels,
        origin=grid.origin,
    )


def network_rate(side_length: float, n_agents: int, params: KinematicParams) -> float:
    """Network-wide passengers/hour: agents times trips/hour at 2/3-side trips."""
    avg_trip_time = (2.0 / 3.0) * side_length / params.v
    return n_agents * 3600.0 / avg_trip_time


def calibrate_arrival_rates(
    world: WorldMap,
    grid: PopulationGrid | None,
    n_agents: int,
    params: KinematicParams,
) -> WorldMap:
    """Split the network rate across vertiports by served population (in place).

    Served populations cached at generation time are used. A map without
    them (e.g. hand-written JSON) can be re-served from ``grid``, counting
    the population inside each vertiport's disk.
    """
    served = np.array([vp.served_population for vp in world.vertiports])
    if served.sum() <= 0 and grid is not None:
        h, w = grid.density.shape
        cx = grid.origin[0] + (np.arange(w) + 0.5) * grid.cell_size
        cy = grid.origin[1] + (np.arange(h) + 0.5) * grid.cell_size
        for vp in world.vertiports:
            d2 = (cx[None, :] - vp.x) ** 2 + (cy[:, None] - vp.y) ** 2
            vp.served_population = float(grid.density[d2 <= vp.radius ** 2 + 1e-9].sum())
        served = np.array([vp.served_population for vp in world.vertiports])
    if served.sum() <= 0:
        raise MapGenerationError("vertiports serve no population")
    total_rate = network_rate(world.side_length, n_agents, params)
    for vp, s in zip(world.vertiports, served):
        vp.lam = float(total_rate * s / served.sum())
    return world
