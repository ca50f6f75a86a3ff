import pytest
from hypothesis import given, settings, strategies as st

from critvar.cdp import (CdpMeasurement, bb_set, block_diff, candidates, measure_cdp,
                         read_measurements, write_measurements)
from critvar.trace import Trace, TraceEvent


def trace_of(bbs):
    return Trace(events=[TraceEvent.ins(4 * i, b, "nop") for i, b in enumerate(bbs)])


def test_bb_set():
    assert bb_set(trace_of([0, 1, 1, 2])) == {0, 1, 2}
    assert bb_set(Trace()) == frozenset()
    assert bb_set(trace_of([3, 1, 3])) == bb_set(trace_of([1, 3, 3]))


def test_bb_set_ignores_non_instruction_events():
    t = trace_of([5])
    t.events.insert(0, TraceEvent.enter("f", 100))
    assert bb_set(t) == {5}


def test_measure_examples():
    assert measure_cdp(trace_of([0, 1, 2]), [trace_of([0, 1, 3])]) == 2
    assert measure_cdp(trace_of([0, 1]), [trace_of([0, 1]), trace_of([0, 1])]) == 0
    dry = trace_of(range(10))
    flips = [trace_of(range(10)), trace_of([0, 1, 5, 10, 11, 12])]
    oracle = max(len(set(range(10)).symmetric_difference(set(f))) for f in
                 ([*range(10)], [0, 1, 5, 10, 11, 12]))
    assert measure_cdp(dry, flips) == oracle == 10


def test_measure_unmeasured_and_oneway():
    assert measure_cdp(trace_of([0]), []) == -1
    assert measure_cdp(trace_of([0, 1, 2]), [trace_of([0, 1, 3, 4])], mode="oneway") == 2
    with pytest.raises(ValueError):
        block_diff({1}, {2}, mode="both")


def test_candidates():
    ms = [CdpMeasurement(0, 5, 3), CdpMeasurement(1, 0, 3), CdpMeasurement(2, 12, 3)]
    assert candidates(ms, 4) == [0, 2]
    assert candidates([CdpMeasurement(i, 0, 3) for i in range(3)], 0) == []
    with pytest.raises(ValueError):
        candidates(ms, -1)


def test_measurement_candidate_flag():
    assert CdpMeasurement(0, 3, 3, theta=2).candidate
    assert not CdpMeasurement(0, 2, 3, theta=2).candidate


def test_csv_round_trip(tmp_path):
    ms = [CdpMeasurement(4, 17, 3), CdpMeasurement(9, 0, 3)]
    path = tmp_path / "m.csv"
    write_measurements(ms, path)
    assert path.read_text().splitlines()[0] == "instance_id,n,flips_tried,candidate"
    back = read_measurements(path)
    assert [(m.instance, m.n, m.flips_tried, m.candidate) for m in back] == [(4, 17, 3, True), (9, 0, 3, False)]


blocks = st.lists(st.integers(0, 30), max_size=25)


@settings(max_examples=300, deadline=None)
@given(blocks, blocks, st.lists(blocks, max_size=3))
def test_properties(a, b, more):
    ta, tb = trace_of(a), trace_of(b)
    assert measure_cdp(ta, [tb]) == measure_cdp(tb, [ta])
    assert measure_cdp(ta, [ta]) == 0
    base = measure_cdp(ta, [tb])
    assert measure_cdp(ta, [tb] + [trace_of(m) for m in more]) >= base
