"""Experiment configuration: map source, methods, seeds and tunables."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .engine import ASSIGNMENT_METHODS, LEVEL_METHODS, TRAJECTORY_METHODS, SimConfig
from .mapgen import (
    PRESETS,
    PopulationGrid,
    SyntheticPopulation,
    WorldMap,
    calibrate_arrival_rates,
    generate_vertiports,
    load_population_grid,
    synth_population,
)
from .streams import stream
from .trajectory import SearchConfig
from .world import KinematicParams

OUT_ENV = "AIRTAXI_OUT"
SYNTHETIC_CHOICES = ("uniform",) + tuple(PRESETS)


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "airtaxi-out"))


def synthetic_grid(name: str, side: float | None = None) -> PopulationGrid:
    """Preset population; ``uniform`` takes its side length from ``side``."""
    if name == "uniform":
        side = 40.0 if side is None else float(side)
        if side <= 0:
            raise ValueError("side length must be positive")
        cells = max(8, min(240, int(round(2 * side))))
        return synth_population(SyntheticPopulation(side, cells, (), floor=100.0))
    if name not in PRESETS:
        raise ValueError(f"unknown synthetic preset {name!r}; choose from {SYNTHETIC_CHOICES}")
    return synth_population(PRESETS[name])


@dataclass
class ExperimentConfig:
    # exactly one map source
    map_file: str | None = None
    pop_file: str | None = None
    synthetic: str | None = None
    side_length: float | None = None
    n_agents: int = 10
    m_vertiports: int = 5
    flight_levels: int = 1
    assignment: str = "proposed"
    trajectory: str = "greedy"
    levels: str | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    k: int = 10
    phi: int = 20
    sigma0: float = 1.0
    sigma_rate: float = 0.25
    hold_threshold: float = SimConfig.hold_threshold
    max_steps: int = 100_000
    params: KinematicParams = field(default_factory=KinematicParams)
    search: SearchConfig = field(default_factory=SearchConfig)
    out_dir: str = field(default_factory=lambda: str(default_out_dir()))

    def __post_init__(self):
        if isinstance(self.params, dict):
            self.params = KinematicParams(**self.params)
        if isinstance(self.search, dict):
            self.search = SimConfig(search=self.search).search

    def validate(self) -> "ExperimentConfig":
        sources = [s for s in (self.map_file, self.pop_file, self.synthetic) if s]
        if len(sources) != 1:
            raise ValueError("give exactly one of a map file, a population file or a synthetic preset")
        if self.synthetic and self.synthetic not in SYNTHETIC_CHOICES:
            raise ValueError(f"unknown synthetic preset {self.synthetic!r}")
        if self.assignment not in ASSIGNMENT_METHODS:
            raise ValueError(f"assignment must be one of {ASSIGNMENT_METHODS}")
        if self.trajectory not in TRAJECTORY_METHODS:
            raise ValueError(f"trajectory must be one of {TRAJECTORY_METHODS}")
        if self.levels is not None and self.levels not in LEVEL_METHODS:
            raise ValueError(f"levels must be one of {LEVEL_METHODS}")
        if self.m_vertiports < 2:
            raise ValueError("need at least two vertiports")
        if not self.seeds:
            raise ValueError("need at least one seed")
        self.sim_config()  # checks the remaining tunables
        return self

    def sim_config(self) -> SimConfig:
        return SimConfig(
            n_agents=self.n_agents,
            assignment=self.assignment,
            trajectory=self.trajectory,
            levels=self.levels,
            flight_levels=self.flight_levels,
            k=self.k,
            phi=self.phi,
            sigma0=self.sigma0,
            sigma_rate=self.sigma_rate,
            hold_threshold=self.hold_threshold,
            max_steps=self.max_steps,
            params=self.params,
            search=self.search,
        )

    def population(self) -> PopulationGrid | None:
        if self.pop_file:
            return load_population_grid(self.pop_file)
        if self.synthetic:
            return synthetic_grid(self.synthetic, self.side_length)
        return None

    def build_world(self, seed: int, grid: PopulationGrid | None = None) -> WorldMap:
        """Map for one seed, with rates calibrated for ``n_agents``.

        A saved map is reused as is; otherwise vertiports are placed afresh
        from the seed's mapgen stream.
        """
        if self.map_file:
            world = WorldMap.load(self.map_file)
            world.flight_levels = self.flight_levels
            calibrate_arrival_rates(world, None, self.n_agents, self.params)
            return world
        grid = grid if grid is not None else self.population()
        world = generate_vertiports(grid, self.m_vertiports, stream(seed, "mapgen"), self.flight_levels)
        calibrate_arrival_rates(world, grid, self.n_agents, self.params)
        return world

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = self.sim_config().level_method
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
