import io

import pytest

from ledmm import datagen, evalkit
from ledmm.ledmap.fitting import ErrorDistribution
from ledmm.matcher import MatchedPath, MatchFailure, SplitMatch
from ledmm.netgraph import CandidatePoint, NetPath
from ledmm.trajectory import Trajectory, TruthEntry

from conftest import geo, line_network

NET = line_network(600, 100)
LENGTHS = {sid: s.l for sid, s in NET.segments.items()}
SEGS = tuple(f"p{i}-p{i + 1}" for i in range(6))


def matched(tid, segs, first=0, entry=0.0, exit_=100.0):
    pts = tuple(CandidatePoint(geo(0, 0), s, 50.0, 0.0) for s in segs)
    length = 100.0 * len(set(segs)) - entry - (100.0 - exit_)
    ordered = tuple(dict.fromkeys(segs))
    return MatchedPath(tid, ordered, pts, 0.0, NetPath(ordered, entry, exit_, length), first)


def truth_of(segs, offsets=None):
    offsets = offsets or [50.0] * len(segs)
    ordered = tuple(dict.fromkeys(segs))
    return TruthEntry(NetPath(ordered, 0.0, 100.0, 100.0 * len(ordered)), tuple(zip(segs, offsets)))


def test_acc_seven_of_ten():
    true = ["p0-p1"] * 5 + ["p1-p2"] * 5
    got = ["p0-p1"] * 5 + ["p1-p2"] * 2 + ["p2-p3"] * 3
    assert evalkit.acc(matched("t", got), truth_of(true)) == pytest.approx(0.7)


def test_acc_forgives_shared_node():
    truth = TruthEntry(NetPath(("p0-p1", "p1-p2"), 0.0, 100.0, 200.0), (("p0-p1", 100.0),))
    mp = MatchedPath("t", ("p1-p2",), (CandidatePoint(geo(100, 0), "p1-p2", 0.0, 0.0),), 0.0,
                     NetPath(("p1-p2",), 0.0, 100.0, 100.0))
    assert evalkit.acc(mp, truth) == 0.0
    assert evalkit.acc(mp, truth, NET) == 1.0


def test_acc_counts_gaps_as_wrong():
    true = ["p0-p1"] * 4
    split = SplitMatch("t", (matched("t", ["p0-p1"]), matched("t", ["p0-p1"], first=3)), ((1, 2),))
    assert evalkit.acc(split, truth_of(true)) == pytest.approx(0.5)


def test_prc_examples():
    truth = truth_of(list(SEGS))
    assert evalkit.prc(matched("t", list(SEGS[:3])), truth, LENGTHS) == pytest.approx(0.5)
    assert evalkit.prc(matched("t", list(SEGS)), truth, LENGTHS) == pytest.approx(1.0)
    # partial end segments: 50 m of the first and 30 m of the last are missed
    part = MatchedPath("t", SEGS, (), 0.0, NetPath(SEGS, 50.0, 70.0, 520.0))
    assert evalkit.prc(part, truth, LENGTHS) == pytest.approx(520.0 / 600.0)
    # overlapping fragments are not double counted
    two = SplitMatch("t", (matched("t", list(SEGS[:4])), matched("t", list(SEGS[2:4]), first=4)), ())
    assert evalkit.prc(two, truth, LENGTHS) == pytest.approx(4 / 6)


def test_id_mismatch():
    with pytest.raises(ValueError):
        evalkit.acc(matched("a", ["p0-p1"]), truth_of(["p0-p1"]), truth_id="b")
    with pytest.raises(ValueError):
        evalkit.prc(matched("a", ["p0-p1"]), truth_of(["p0-p1"]), LENGTHS, truth_id="b")


def test_mt_examples():
    assert evalkit.mt([0.1, 0.2]) == pytest.approx(150.0)
    with pytest.raises(ValueError):
        evalkit.mt([])


def test_unknown_method():
    with pytest.raises(ValueError, match="unknown method"):
        evalkit.method_runner("viterbi", NET, None, None)


@pytest.fixture(scope="module")
def noiseless():
    ds = datagen.make_dataset(0, cols=6, rows=6, regimes=None, n_routes=3, route_len=400, bus_per_route=1,
                              n_trips=4, trip_legs=1, trip_min_len=500)
    led = datagen.uniform_led(ds.net, ErrorDistribution("gaussian", (0.0, 5.0)))
    return ds, led


def test_noiseless_suite_is_exact(noiseless):
    ds, led = noiseless
    report = evalkit.run_suite(ds.net, led, ds.trips, intervals=(5, 30), seed=0)
    for row in report.rows:
        assert row.n_fail == 0
        if row.method == "spt":
            # chords cut corners, so length similarity can favour a slightly shorter path
            assert row.acc >= 0.9
            continue
        assert row.acc == pytest.approx(1.0), row
        assert row.prc == pytest.approx(1.0), row
    buf = io.StringIO()
    report.write(buf)
    assert buf.getvalue().splitlines()[0] == "method,interval_s,acc,prc,mt_ms,n_ok,n_fail"
    assert len(buf.getvalue().splitlines()) == 1 + 4 * 2


def test_parallel_suite_matches_serial(noiseless):
    ds, led = noiseless
    key = lambda rep: [(d.method, d.interval_s, d.traj_id, d.acc, d.prc, d.af) for d in rep.details]
    one = evalkit.run_suite(ds.net, led, ds.trips, ("lnsp", "spt"), (30,), seed=1, jobs=1)
    two = evalkit.run_suite(ds.net, led, ds.trips, ("lnsp", "spt"), (30,), seed=1, jobs=2)
    assert key(one) == key(two)


def test_match_all_order_and_failures(noiseless):
    ds, led = noiseless
    trajs = [t for t, _ in ds.trips.values()]
    far = Trajectory("far", [geo(1e5, 1e5, 0), geo(1e5 + 10, 1e5, 5)])
    out = evalkit.match_all(ds.net, led, trajs + [far])
    assert [tid for tid, _, _ in out] == [t.id for t in trajs] + ["far"]
    assert isinstance(out[-1][1], MatchFailure)
    assert all(isinstance(r, MatchedPath) for _, r, _ in out[:-1])
