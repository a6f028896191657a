import pytest
from hypothesis import given, strategies as st

from flowaction.ingest import Flow, FlowKey
from flowaction.series import Interval, SeriesType, complete_series, slice_interval, split_complete, to_series

from conftest import DEVICE, pkt

FLOW1_COMPLETE = [282, -1514, -1514, -315, 188, -113, 514, 96, 1514, 179, 603, 98, 801, 98, -477]


def flow_from_complete(values):
    packets = [pkt(float(i), outgoing=v > 0, size=abs(v), seq=i) for i, v in enumerate(values)]
    return Flow(FlowKey(DEVICE, 43210, "31.13.64.1", 443), packets, 0.0, float(len(values)))


def test_flow1_series():
    f = flow_from_complete(FLOW1_COMPLETE)
    assert to_series(f, SeriesType.INCOMING) == [1514, 1514, 315, 113, 477]
    assert to_series(f, SeriesType.OUTGOING) == [282, 188, 514, 96, 1514, 179, 603, 98, 801, 98]
    assert to_series(f, SeriesType.COMPLETE) == FLOW1_COMPLETE


def test_outgoing_only_flow_has_empty_incoming():
    assert to_series(flow_from_complete([100, 200]), SeriesType.INCOMING) == []


def test_slices():
    assert slice_interval(FLOW1_COMPLETE, Interval(1, 6)) == [282, -1514, -1514, -315, 188, -113]
    s13 = list(range(1, 14))
    assert slice_interval(s13, Interval(7, 10)) == [7, 8, 9, 10]
    assert slice_interval([1, 2, 3, 4, 5], Interval(8, 11)) == []
    assert slice_interval([1, 2, 3], Interval(2, 9)) == [2, 3]


def test_interval_validation():
    with pytest.raises(ValueError):
        Interval(0, 3)
    with pytest.raises(ValueError):
        Interval(4, 3)


def test_series_type_parse():
    assert SeriesType.parse("In") is SeriesType.INCOMING
    assert SeriesType.parse("complete") is SeriesType.COMPLETE


nonzero = st.integers(55, 1514).flatmap(lambda m: st.sampled_from([m, -m]))


@given(st.lists(nonzero, max_size=40))
def test_complete_consistent_with_directional_series(values):
    f = flow_from_complete(values)
    c = complete_series(f)
    assert c == values
    assert [v for v in c if v > 0] == to_series(f, SeriesType.OUTGOING)
    assert [-v for v in c if v < 0] == to_series(f, SeriesType.INCOMING)
    assert split_complete(c, SeriesType.INCOMING) == to_series(f, SeriesType.INCOMING)
    assert all(v > 0 for v in to_series(f, SeriesType.INCOMING))


@given(st.lists(st.integers(), max_size=30), st.integers(1, 40), st.integers(0, 40))
def test_slice_length(series, x, extra):
    y = x + extra
    expected = min(y, len(series)) - x + 1 if x <= len(series) else 0
    assert len(slice_interval(series, Interval(x, y))) == expected
