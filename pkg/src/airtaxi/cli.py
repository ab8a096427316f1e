"""Command line: ``airtaxi genmap | run | sweep``.

Exit codes: 0 success, 1 input/runtime error, 2 usage error, 3 a run hit
the step limit before every passenger was delivered.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import SYNTHETIC_CHOICES, ExperimentConfig, default_out_dir
from .engine import ASSIGNMENT_METHODS, LEVEL_METHODS, TRAJECTORY_METHODS, MetricsSummary, build_id, run
from .levels import export_stack
from .mapgen import GridLoadError, MapGenerationError, WorldMap

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_TRUNCATED = 0, 1, 2, 3

REPORT_METRICS = (
    ("nmac_per_hr_agent", "NMAC / (hr·agent)", 3),
    ("los_per_hr_agent", "LOS / (hr·agent)", 3),
    ("passengers_per_hr_agent", "Passengers / (hr·agent)", 2),
    ("avg_wait_s", "Avg wait time (s)", 0),
    ("max_wait_s", "Max wait time (s)", 0),
    ("trip_ratio_mean", "Trip ratio", 3),
)


def parse_seeds(text: str) -> list[int]:
    """``"0-4"``, ``"1,3,5"`` or a mix such as ``"0-2,7"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            a, b = part.split("-", 1) if not part.startswith("-") else (part, "")
            lo, hi = int(a), int(b)
            if hi < lo:
                raise argparse.ArgumentTypeError(f"bad seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _csv_list(choices):
    def parse(text: str) -> list[str]:
        items = [t.strip() for t in text.split(",") if t.strip()]
        bad = [t for t in items if t not in choices]
        if bad or not items:
            raise argparse.ArgumentTypeError(f"invalid choice(s) {bad}; pick from {', '.join(choices)}")
        return items

    return parse


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("expected positive integers")
    return vals


def _add_map_source(p: argparse.ArgumentParser, allow_map: bool) -> None:
    # run/sweep may take the map source from --config instead
    g = p.add_mutually_exclusive_group(required=not allow_map)
    if allow_map:
        g.add_argument("--map", dest="map_file", help="saved map JSON")
    g.add_argument("--pop", dest="pop_file", help="population grid (ESRI ASCII .asc or CSV)")
    g.add_argument("--synthetic", choices=SYNTHETIC_CHOICES, help="synthetic population preset")
    p.add_argument("--side", type=float, default=None, help="side length (km) for --synthetic uniform")


def _add_tunables(p: argparse.ArgumentParser) -> None:
    # unset flags fall back to --config, then to ExperimentConfig defaults
    p.add_argument("--n", dest="n_agents", type=int, help="number of agents (default 10)")
    p.add_argument("--m", dest="m_vertiports", type=int, help="vertiports on generated maps (default 5)")
    p.add_argument("--k", type=int, help="candidate matchings (default 10)")
    p.add_argument("--phi", type=int, help="flight-level lookahead steps (default 20)")
    p.add_argument("--hold-threshold", type=float)
    p.add_argument("--max-steps", type=int, help="truncation limit (default 100000)")
    p.add_argument("--iterations", type=int, default=None, help="MCTS iterations")
    p.add_argument("--config", help="JSON file of ExperimentConfig fields; flags override it")
    p.add_argument("--out", default=None, help=f"output directory (default ${'{'}AIRTAXI_OUT{'}'} or {default_out_dir()})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="airtaxi", description="Air taxi network simulator")
    parser.add_argument("--version", action="version", version=build_id())
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("genmap", help="place vertiports and write a map JSON")
    _add_map_source(g, allow_map=False)
    g.add_argument("--m", type=int, required=True, help="number of vertiports")
    g.add_argument("--n", type=int, default=10, help="fleet size used to calibrate arrival rates")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--flight-levels", type=int, default=1)
    g.add_argument("--out", default=None, help="output map path (default <outdir>/map.json)")

    r = sub.add_parser("run", help="simulate one configuration and seed")
    _add_map_source(r, allow_map=True)
    _add_tunables(r)
    r.add_argument("--assignment", choices=ASSIGNMENT_METHODS)
    r.add_argument("--trajectory", choices=TRAJECTORY_METHODS)
    r.add_argument("--levels", choices=LEVEL_METHODS)
    r.add_argument("--flight-levels", type=int)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--no-agents", action="store_true", help="omit per-agent state from the trace")
    r.add_argument("--export-density", type=int, metavar="STEP", default=None,
                   help="also write the flight-level density stack as of this step")

    s = sub.add_parser("sweep", help="run a method grid over seeds and tabulate mean ± std")
    _add_map_source(s, allow_map=True)
    _add_tunables(s)
    s.add_argument("--assignment", type=_csv_list(ASSIGNMENT_METHODS))
    s.add_argument("--trajectory", type=_csv_list(TRAJECTORY_METHODS))
    s.add_argument("--levels", type=_csv_list(LEVEL_METHODS))
    s.add_argument("--flight-levels", type=_int_list)
    s.add_argument("--seeds", type=parse_seeds, help="e.g. 0-9 or 1,4,7 (default 0-9)")
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def _experiment(args, **overrides) -> ExperimentConfig:
    """Config file values, then explicitly given flags, then ``overrides``."""
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    flags = {
        "n_agents": args.n_agents,
        "m_vertiports": args.m_vertiports,
        "k": args.k,
        "phi": args.phi,
        "hold_threshold": args.hold_threshold,
        "max_steps": args.max_steps,
        "out_dir": args.out,
    }
    base.update({k: v for k, v in flags.items() if v is not None})
    if args.map_file or args.pop_file or args.synthetic:
        base.update(map_file=args.map_file, pop_file=args.pop_file, synthetic=args.synthetic)
    if args.side is not None:
        base["side_length"] = args.side
    base.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig.from_dict(base)
    if args.iterations is not None:
        cfg.search = replace(cfg.search, iterations=args.iterations)
    return cfg.validate()


def _vertiport_table(world: WorldMap) -> str:
    lines = [f"{'id':>3} {'x_km':>8} {'y_km':>8} {'lambda/hr':>10} {'served':>12} {'radius':>7}"]
    for vp in world.vertiports:
        lines.append(f"{vp.id:>3} {vp.x:>8.2f} {vp.y:>8.2f} {vp.lam:>10.2f} {vp.served_population:>12.0f} {vp.radius:>7.2f}")
    return "\n".join(lines)


def cmd_genmap(args) -> int:
    cfg = ExperimentConfig(
        pop_file=args.pop_file,
        synthetic=args.synthetic,
        side_length=args.side,
        n_agents=args.n,
        m_vertiports=args.m,
        flight_levels=args.flight_levels,
        seeds=[args.seed],
    ).validate()
    world = cfg.build_world(args.seed)
    out = Path(args.out) if args.out else Path(cfg.out_dir) / "map.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    data = world.to_dict()
    data["generated_by"] = {"build": build_id(), "seed": args.seed, "config": cfg.to_dict()}
    out.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    print(_vertiport_table(world))
    print(f"wrote {out}")
    return EXIT_OK


def _write_summary(summary: MetricsSummary, out: Path) -> None:
    (out / "summary.json").write_text(summary.to_json())
    (out / "summary.csv").write_text(summary.csv_header() + "\n" + summary.csv_row() + "\n")


def cmd_run(args) -> int:
    cfg = _experiment(
        args,
        assignment=args.assignment,
        trajectory=args.trajectory,
        levels=args.levels,
        flight_levels=args.flight_levels,
        seeds=[args.seed],
    )
    world = cfg.build_world(args.seed)
    sim = cfg.sim_config()
    sim.record_agents = not args.no_agents
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace, summary = run(sim, world, args.seed)
    trace.header["experiment"] = cfg.to_dict()
    trace.write(out / "trace.jsonl")
    _write_summary(summary, out)
    if args.export_density is not None:
        _export_density(sim, world, args.seed, args.export_density, out / "density")
    print(json.dumps({k: getattr(summary, k) for k in MetricsSummary.METRICS}, indent=2))
    if summary.truncated:
        print(f"warning: stopped after {cfg.max_steps} steps with passengers undelivered", file=sys.stderr)
        return EXIT_TRUNCATED
    return EXIT_OK


def _export_density(sim, world, seed: int, at_step: int, directory: Path) -> None:
    from .engine import SimState, _fleet_view, step
    from .levels import build_density_stack

    import numpy as np

    state = SimState(world, sim, seed)
    while state.step_index < at_step and not state.terminated:
        step(state)
    view = _fleet_view(state, np.zeros(state.n, dtype=bool))
    stack = build_density_stack(view, world, sim.params, phi=sim.phi, levels=sim.flight_levels,
                                cells=sim.grid_cells, sigma0=sim.sigma0, sigma_rate=sim.sigma_rate)
    export_stack(stack, directory)


# -- sweep ------------------------------------------------------------------

def _sweep_one(job):
    cfg, seed = job
    world = cfg.build_world(seed)
    sim = cfg.sim_config()
    sim.record_agents = False
    _, summary = run(sim, world, seed)
    return summary


def sweep_cells(cfg: ExperimentConfig, assignment, trajectory, levels, flight_levels) -> list[ExperimentConfig]:
    cells = []
    for a, t, lv, f in itertools.product(assignment, trajectory, levels or [None], flight_levels):
        cells.append(cfg.with_(assignment=a, trajectory=t, levels=lv, flight_levels=f))
    return cells


def cell_label(cfg: ExperimentConfig) -> str:
    sim = cfg.sim_config()
    return f"{cfg.assignment}/{cfg.trajectory}/{sim.level_method}/F={cfg.flight_levels}"


def aggregate(summaries: list[MetricsSummary]) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation (n-1) per metric."""
    out = {}
    for key, _, _ in REPORT_METRICS:
        vals = [getattr(s, key) for s in summaries]
        mean = statistics.fmean(vals)
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        out[key] = (mean, std)
    return out


def render_report(labels: list[str], stats: list[dict], n_seeds: int, header: str = "") -> str:
    buf = io.StringIO()
    if header:
        buf.write(header + "\n\n")
    buf.write(f"Mean ± sample std over {n_seeds} seed(s).\n\n")
    buf.write("| Metric | Method | Value |\n|---|---|---|\n")
    for key, title, digits in REPORT_METRICS:
        for label, st in zip(labels, stats):
            m, s = st[key]
            buf.write(f"| {title} | {label} | {m:.{digits}f} ± {s:.{digits}f} |\n")
    return buf.getvalue()


def cmd_sweep(args) -> int:
    cfg = _experiment(args, seeds=args.seeds or (None if args.config else list(range(10))))
    cells = sweep_cells(
        cfg,
        args.assignment or [cfg.assignment],
        args.trajectory or [cfg.trajectory],
        args.levels or [cfg.levels],
        args.flight_levels or [cfg.flight_levels],
    )
    seeds = cfg.seeds
    for c in cells:
        c.validate()
    jobs = [(c, seed) for c in cells for seed in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_cell = [results[i * len(seeds):(i + 1) * len(seeds)] for i in range(len(cells))]
    labels = [cell_label(c) for c in cells]
    stats = [aggregate(rs) for rs in per_cell]

    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "seed"] + [f for f in MetricsSummary.METRICS] + ["truncated"])
        for label, rs in zip(labels, per_cell):
            for s in rs:
                w.writerow([label, s.seed] + [repr(getattr(s, f)) for f in MetricsSummary.METRICS] + [s.truncated])
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "n_seeds"] + [f"{k}_{x}" for k, _, _ in REPORT_METRICS for x in ("mean", "std")])
        for label, st in zip(labels, stats):
            w.writerow([label, len(seeds)] + [repr(v) for k, _, _ in REPORT_METRICS for v in st[k]])
    header = f"build {build_id()}; config: `{json.dumps(cfg.to_dict(), sort_keys=True)}`"
    report = render_report(labels, stats, len(seeds), header)
    (out / "report.md").write_text(report)
    print(report)
    truncated = sum(s.truncated for s in results)
    if truncated:
        print(f"warning: {truncated} run(s) truncated", file=sys.stderr)
        return EXIT_TRUNCATED
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"genmap": cmd_genmap, "run": cmd_run, "sweep": cmd_sweep}[args.command]
    try:
        return handler(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_ERROR
    except (GridLoadError, MapGenerationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
