"""Air taxi fleet simulation: vertiport maps, assignment, flight levels and collision-aware trajectories."""

__version__ = "0.1.0"
