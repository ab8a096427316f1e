import math

import numpy as np
import pytest

from airtaxi.levels import (
    DensityStack,
    Fly,
    Hold,
    build_density_stack,
    departure_path,
    export_stack,
    load_stack,
    predict_paths,
    random_level_baseline,
    route_risk,
    select_flight_level,
)
from airtaxi.streams import stream
from airtaxi.trajectory import FleetView
from conftest import make_world


def view_of(rows):
    """rows: (x, y, theta, flying, level, tx, ty)"""
    a = np.array(rows, dtype=float)
    n = len(rows)
    return FleetView(
        ids=np.arange(n), x=a[:, 0], y=a[:, 1], theta=a[:, 2], flying=a[:, 3].astype(bool),
        level=a[:, 4].astype(int), tx=a[:, 5], ty=a[:, 6], ready=np.zeros(n, bool),
    )


@pytest.fixture
def world():
    return make_world([(2.0, 20.0), (38.0, 20.0), (20.0, 38.0)], side=40.0, levels=2)


def centroid(grid, stack):
    h, w = grid.shape
    cx = stack.origin[0] + (np.arange(w) + 0.5) * stack.cell_size
    cy = stack.origin[1] + (np.arange(h) + 0.5) * stack.cell_size
    m = grid.sum()
    return (grid.sum(axis=0) @ cx) / m, (grid.sum(axis=1) @ cy) / m


def cut_kernel_centroid(x, stack, s):
    """Centroid along x of a Gaussian sampled at cell centres within 3 sigma."""
    sigma = 1.0 + 0.25 * s
    g = (x - stack.origin[0]) / stack.cell_size - 0.5
    c = np.arange(stack.grids.shape[-1], dtype=float)
    w = np.where(np.abs(c - g) <= 3 * sigma, np.exp(-0.5 * ((c - g) / sigma) ** 2), 0.0)
    return stack.origin[0] + (w @ (c + 0.5) / w.sum()) * stack.cell_size


def test_one_agent_has_unit_mass_until_landing(world, params):
    # interior target so no kernel mass falls off the map edge
    v = view_of([(5.0, 20.0, 0.0, 1, 1, 30.0, 20.0)])
    st = build_density_stack(v, world, params, phi=40, levels=2)
    x, steps_flying = 5.0, 0
    while 30.0 - x > params.d_land:
        x += 0.9
        steps_flying += 1
    masses = st.grids[0].sum(axis=(1, 2))
    np.testing.assert_allclose(masses[:steps_flying], 1.0, rtol=1e-9)
    assert np.all(masses[steps_flying:] == 0)
    assert st.grids[1].sum() == 0


def test_no_flyers_gives_empty_stack(world, params):
    v = view_of([(2.0, 20.0, 0.0, 0, 1, 38.0, 20.0)])
    assert build_density_stack(v, world, params, phi=5).grids.sum() == 0


def test_kernel_centre_advances_along_heading(world, params):
    v = view_of([(5.0, 20.0, 0.0, 1, 1, 38.0, 20.0)])
    xs, ys, active = predict_paths(v, params, 10)
    np.testing.assert_allclose(xs[0], 5.0 + 0.9 * np.arange(1, 11), atol=1e-12)
    assert active.all()
    st = build_density_stack(v, world, params, phi=10)
    for s in range(1, 11):
        cx, cy = centroid(st.grid(1, s), st)
        # the 3-sigma cut around an off-grid centre shifts the centroid slightly
        assert cx == pytest.approx(cut_kernel_centroid(5.0 + 0.9 * s, st, s), abs=1e-9)
        assert abs(cx - (5.0 + 0.9 * s)) < 0.05 * st.cell_size
        assert cy == pytest.approx(20.0, abs=1e-9)


def test_peak_risk_on_cell_centre(world):
    st = DensityStack.empty(world, 2, 3)
    px, py = st.origin[0] + 64.5 * st.cell_size, st.origin[1] + 40.5 * st.cell_size
    st.deposit(1, 2, px, py)
    sigma = 1.0 + 0.25 * 2
    k = np.arange(-4, 5)  # offsets within 3 sigma = 4.5 cells
    w1 = np.exp(-0.5 * (k / sigma) ** 2)
    peak = (1 / w1.sum()) ** 2
    assert route_risk(st, 1, [(0.0, 0.0), (px, py)]) == pytest.approx(peak, rel=1e-12)
    assert route_risk(st, 2, [(0.0, 0.0), (px, py)]) == 0.0
    assert route_risk(DensityStack.empty(world, 2, 3), 1, [(px, py)] * 3) == 0.0
    with pytest.raises(ValueError):
        route_risk(st, 3, [(px, py)])


def test_sigma_growth_flattens_peak(world):
    st = DensityStack.empty(world, 1, 20)
    for s in range(1, 21):
        st.deposit(1, s, 20.0, 20.0)
    peaks = st.grids[0].max(axis=(1, 2))
    assert np.all(np.diff(peaks) <= 1e-15)
    np.testing.assert_allclose(st.grids[0].sum(axis=(1, 2)), 1.0, rtol=1e-12)


def test_level_choice_examples(world):
    st = DensityStack.empty(world, 2, 3)
    path = [(10.0, 10.0), (10.9, 10.0), (11.8, 10.0)]
    for s, (x, y) in enumerate(path, 1):
        st.deposit(1, s, x, y)
    d = select_flight_level(path, st, hold_threshold=10.0)
    assert d == Fly(level=2, risk=0.0)
    quiet = DensityStack.empty(world, 2, 3)
    assert select_flight_level(path, quiet, 10.0) == Fly(level=1, risk=0.0)
    for s, (x, y) in enumerate(path, 1):
        st.deposit(2, s, x, y)
    d = select_flight_level(path, st, hold_threshold=0.01)
    assert isinstance(d, Hold) and d.min_risk > 0.01
    with pytest.raises(ValueError):
        select_flight_level(None, st, 1.0)


def test_fly_deposits_the_route(world):
    st = DensityStack.empty(world, 1, 3)
    path = [(10.0, 10.0), (10.9, 10.0), (11.8, 10.0)]
    before = route_risk(st, 1, path)
    select_flight_level(path, st, 10.0)
    assert route_risk(st, 1, path) > before
    assert st.grids[0].sum() == pytest.approx(3.0)


def test_random_baseline_frequencies():
    rng = stream(0, "levels")
    draws = [random_level_baseline(4, rng).level for _ in range(10_000)]
    counts = np.bincount(draws, minlength=5)[1:]
    sd = math.sqrt(10_000 * 0.25 * 0.75)
    assert np.all(np.abs(counts - 2500) < 3 * sd)
    assert all(random_level_baseline(1, rng).level == 1 for _ in range(20))


def test_departure_path_starts_at_vertiport(params):
    path = departure_path(2.0, 20.0, 38.0, 20.0, params, 20)
    assert path[0] == (2.0, 20.0)
    np.testing.assert_allclose(np.diff([p[0] for p in path]), 0.9, rtol=1e-12)
    short = departure_path(2.0, 20.0, 5.0, 20.0, params, 20)
    assert len(short) < 5


def test_export_round_trip(world, tmp_path):
    st = DensityStack.empty(world, 2, 2, cells=16)
    st.deposit(2, 1, 12.0, 30.0)
    export_stack(st, tmp_path / "bin")
    back = load_stack(tmp_path / "bin")
    np.testing.assert_array_equal(back.grids, st.grids)
    files = export_stack(st, tmp_path / "csv", fmt="csv")
    assert len(files) == 4
    g = np.loadtxt(tmp_path / "csv" / "level2_step1.csv", delimiter=",")
    np.testing.assert_allclose(g[::-1], st.grid(2, 1), rtol=1e-9)
    with pytest.raises(ValueError):
        export_stack(st, tmp_path / "x", fmt="png")
