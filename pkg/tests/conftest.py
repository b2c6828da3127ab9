"""Shared fixtures: small hand-built networks and one seeded planted-regime dataset."""
import pytest

from ledmm import datagen
from ledmm.ledmap import LedConfig, build_led
from ledmm.netgraph import GeoPoint, Projection
from ledmm.trajectory import Trajectory


def line_network(length=1200.0, step=100.0, two_way=False):
    """Straight eastbound road split into ``step``-long segments."""
    n = int(round(length / step))
    xy = {f"p{i}": (i * step, 0.0) for i in range(n + 1)}
    links = [(f"p{i}-p{i + 1}", f"p{i}", f"p{i + 1}") for i in range(n)]
    if two_way:
        links += [(f"p{i + 1}-p{i}", f"p{i + 1}", f"p{i}") for i in range(n)]
    return datagen.network_from_xy(xy, links)


_ORIGIN_PROJ = Projection(datagen.ORIGIN[1])


def geo(x, y, t=None):
    """GeoPoint at planar (x, y) meters, placed the same way network_from_xy places nodes."""
    ox, oy = _ORIGIN_PROJ.to_xy(GeoPoint(*datagen.ORIGIN))
    return _ORIGIN_PROJ.to_geo(ox + x, oy + y, t)


def traj_from_xy(xys, tid="t", interval=5):
    return Trajectory(tid, [geo(x, y, k * interval) for k, (x, y) in enumerate(xys)])


@pytest.fixture(scope="session")
def planted():
    """Seed-0 planted two-regime dataset with its K_g=2 LED model."""
    ds = datagen.make_dataset(0)
    led = build_led(ds.net, ds.routes, ds.bus, ds.grid, LedConfig(seed=0, K_g=2))
    return ds, led


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
