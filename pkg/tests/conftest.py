import numpy as np
import pytest

from airtaxi.mapgen import Vertiport, WorldMap
from airtaxi.world import KinematicParams


@pytest.fixture
def params():
    return KinematicParams()


def make_world(points, lam=0.0, side=40.0, levels=1):
    """WorldMap with vertiports at ``points`` (ids 1..m)."""
    lams = np.broadcast_to(np.asarray(lam, dtype=float), (len(points),))
    vps = [Vertiport(id=i + 1, x=float(x), y=float(y), lam=float(l), served_population=1.0)
           for i, ((x, y), l) in enumerate(zip(points, lams))]
    return WorldMap(side_length=side, vertiports=vps, flight_levels=levels)


@pytest.fixture
def world2():
    return make_world([(10.0, 20.0), (30.0, 20.0)], lam=60.0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
