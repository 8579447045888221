from ccnstream import trace_checks as tc
from ccnstream.ccn_core import Name, segment_name
from ccnstream.fabric import Direction, Kind, Topology, TraceRecord

TOPO = Topology().add_link("a", "b", 10)
SEG = segment_name(Name.of("b", "s"), 4).to_uri()


def rec(t, node, d, kind=Kind.INTEREST, name="ccnx:/b/x", ck=None, note=""):
    return TraceRecord(t, node, Direction(d), kind, name, 20, ck, note)


def test_flow_balance_accepts_a_link_drop():
    assert not tc.flow_balance([rec(0, "a", "SEND"), rec(0, "a", "DROP", note="link")], TOPO)
    # Without a note (as read back from JSONL) the adjacent SEND identifies it.
    assert not tc.flow_balance([rec(0, "a", "SEND"), rec(0, "a", "DROP")], TOPO)


def test_flow_balance_catches_lost_and_phantom_messages():
    assert tc.flow_balance([rec(0, "a", "SEND")], TOPO)
    assert tc.flow_balance([rec(10, "b", "RECV")], TOPO)
    # Arrives at the wrong time for the link latency.
    assert tc.flow_balance([rec(0, "a", "SEND"), rec(15, "b", "RECV")], TOPO)


def test_reverse_path_and_response_names():
    obj = rec(20, "a", "RECV", Kind.OBJECT)
    assert tc.reverse_path([obj])
    assert not tc.reverse_path([rec(0, "a", "SEND"), obj])
    accept = rec(10, "b", "SEND", Kind.OBJECT, "ccnx:/b/other", "ACCEPT")
    assert tc.response_name_exactness([rec(10, "b", "RECV"), accept])


def test_segment_helpers():
    assert tc.split_segment(SEG) == ("ccnx:/b/s", 4)
    assert tc.split_segment("ccnx:/b/s") is None
    trace = [rec(0, "a", "SEND", name=SEG), rec(500, "a", "SEND", name=SEG)]
    assert tc.retransmissions(trace, "a", "ccnx:/b/s") == 1
    assert tc.reader_in_flight(trace, "a", "ccnx:/b/s") == [1, 1]


def test_first_divergence():
    assert tc.first_divergence(["x", "y"], ["x", "y"]) is None
    assert tc.first_divergence(["x", "z"], ["x", "y"]) == (2, "z", "y")
    assert tc.first_divergence(["x"], ["x", "y"]) == (2, "<end of trace>", "y")
