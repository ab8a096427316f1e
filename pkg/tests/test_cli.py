import csv
import json
import statistics

import pytest

from airtaxi.cli import EXIT_ERROR, EXIT_TRUNCATED, main, parse_seeds
from airtaxi.engine import SimTrace
from airtaxi.mapgen import WorldMap


@pytest.fixture
def small_map(tmp_path):
    path = tmp_path / "map.json"
    assert main(["genmap", "--synthetic", "uniform", "--side", "40", "--m", "5", "--seed", "1",
                 "--n", "4", "--out", str(path)]) == 0
    return path


def test_genmap_is_reproducible(tmp_path, small_map, capsys):
    other = tmp_path / "again.json"
    main(["genmap", "--synthetic", "uniform", "--side", "40", "--m", "5", "--seed", "1", "--n", "4", "--out", str(other)])
    a, b = json.loads(small_map.read_text()), json.loads(other.read_text())
    assert a == b
    world = WorldMap.load(small_map)
    assert world.m == 5 and world.side_length == 40.0
    assert "generated_by" in a and "build" in a["generated_by"]
    assert "lambda/hr" in capsys.readouterr().out


def test_genmap_from_population_file(tmp_path):
    # ESRI ASCII grid: dense right half
    rows = [" ".join(["1"] * 10 + ["400"] * 10) for _ in range(20)]
    asc = tmp_path / "grid.asc"
    asc.write_text("ncols 20\nnrows 20\nxllcorner 0\nyllcorner 0\ncellsize 2\nNODATA_value -9999\n" + "\n".join(rows) + "\n")
    out = tmp_path / "m.json"
    assert main(["genmap", "--pop", str(asc), "--m", "8", "--seed", "0", "--out", str(out)]) == 0
    world = WorldMap.load(out)
    assert world.m == 8
    assert sum(vp.x > 20 for vp in world.vertiports) > sum(vp.x < 20 for vp in world.vertiports)


def test_missing_file_is_an_error(tmp_path, capsys):
    assert main(["genmap", "--pop", str(tmp_path / "nope.asc"), "--m", "3"]) == EXIT_ERROR
    assert "error" in capsys.readouterr().err


def test_bad_method_is_a_usage_error(small_map):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--map", str(small_map), "--assignment", "fastest"])
    assert exc.value.code == 2


def test_run_writes_outputs(small_map, tmp_path):
    out = tmp_path / "run"
    code = main(["run", "--map", str(small_map), "--n", "4", "--trajectory", "mcts", "--iterations", "10",
                 "--seed", "3", "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["trajectory"] == "mcts" and summary["build"]
    assert summary["config"]["search"]["iterations"] == 10
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert float(rows[0]["passengers_per_hr_agent"]) == summary["passengers_per_hr_agent"]
    trace = SimTrace.read(out / "trace.jsonl")
    assert trace.header["experiment"]["map_file"] == str(small_map)


def test_trajectory_flag_keeps_arrivals(small_map, tmp_path):
    runs = {}
    for method in ("greedy", "mcts"):
        out = tmp_path / method
        main(["run", "--map", str(small_map), "--n", "4", "--trajectory", method, "--iterations", "10",
              "--seed", "3", "--out", str(out), "--no-agents"])
        runs[method] = SimTrace.read(out / "trace.jsonl")
    assert (out / "trace.jsonl").read_bytes() != (tmp_path / "greedy" / "trace.jsonl").read_bytes()
    assert list(runs["greedy"].events("spawn")) == list(runs["mcts"].events("spawn"))


def test_truncation_exit_code(small_map, tmp_path, capsys):
    code = main(["run", "--map", str(small_map), "--n", "4", "--max-steps", "3", "--out", str(tmp_path)])
    assert code == EXIT_TRUNCATED
    assert json.loads((tmp_path / "summary.json").read_text())["truncated"] is True


def test_config_file_and_flag_precedence(small_map, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"map_file": str(small_map), "n_agents": 3, "k": 2, "max_steps": 4}))
    out = tmp_path / "o"
    main(["run", "--config", str(conf), "--k", "5", "--out", str(out)])
    cfg = json.loads((out / "summary.json").read_text())["config"]
    assert (cfg["n_agents"], cfg["k"], cfg["max_steps"]) == (3, 5, 4)


def test_unknown_config_key(small_map, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"map_file": str(small_map), "agents": 3}))
    assert main(["run", "--config", str(conf), "--out", str(tmp_path)]) == EXIT_ERROR


def test_density_export(small_map, tmp_path):
    out = tmp_path / "d"
    assert main(["run", "--map", str(small_map), "--n", "4", "--export-density", "5", "--out", str(out)]) == 0
    assert any((out / "density").iterdir())


def test_sweep_counts_and_report(small_map, tmp_path):
    out = tmp_path / "sw"
    args = ["sweep", "--map", str(small_map), "--n", "3", "--assignment", "proposed,greedy,first_dispatch",
            "--seeds", "0-2", "--out", str(out)]
    assert main(args) == 0
    runs = list(csv.DictReader((out / "runs.csv").open()))
    assert len(runs) == 9
    report = list(csv.DictReader((out / "report.csv").open()))
    assert len(report) == 3 and all(r["n_seeds"] == "3" for r in report)
    for row in report:
        vals = [float(r["nmac_per_hr_agent"]) for r in runs if r["cell"] == row["cell"]]
        assert abs(statistics.fmean(vals) - float(row["nmac_per_hr_agent_mean"])) <= 1e-9
        assert abs(statistics.stdev(vals) - float(row["nmac_per_hr_agent_std"])) <= 1e-9
    md = (out / "report.md").read_text()
    assert md.count("| NMAC / (hr·agent) |") == 3 and "build" in md
    first = (out / "report.csv").read_bytes()
    assert main(args) == 0
    assert (out / "report.csv").read_bytes() == first


def test_sweep_flight_level_grid(small_map, tmp_path):
    out = tmp_path / "fl"
    assert main(["sweep", "--map", str(small_map), "--n", "3", "--levels", "proposed,random",
                 "--flight-levels", "2,3,4", "--seeds", "0", "--out", str(out)]) == 0
    cells = [r["cell"] for r in csv.DictReader((out / "report.csv").open())]
    assert len(cells) == 6 and len(set(cells)) == 6


def test_parse_seeds():
    assert parse_seeds("0-3,7") == [0, 1, 2, 3, 7]
    assert parse_seeds("5") == [5]
