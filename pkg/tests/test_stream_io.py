import itertools
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from ccnstream import crypto_suite as cs
from ccnstream import trace_checks
from ccnstream.ccn_core import ContentObject, Name, segment_name, verify_object
from ccnstream.fabric import AppFace, Direction, DropPolicy, Kind, Simulator, Topology
from ccnstream.stream_io import (
    FlowConfig,
    StreamClosed,
    StreamReader,
    StreamWriter,
    chunk,
)

STREAM = Name.of("w", "s1")
WRITER_ID = cs.generate_identity(b"\x01" * 32)


def oracle_segments(data, size):
    """Expected (payload, final_block_id) list for ``data`` written then closed."""
    pieces = [data[i:i + size] for i in range(0, len(data), size)]
    if not pieces or len(pieces[-1]) == size:
        pieces.append(b"")
    return [(p, i if i == len(pieces) - 1 else None) for i, p in enumerate(pieces)]


@pytest.mark.parametrize("size, expect", [
    (2500, [(1024, None), (1024, None), (452, 2)]),
    (0, [(0, 0)]),
    (2048, [(1024, None), (1024, None), (0, 2)]),
    (1, [(1, 0)]),
])
def test_writer_segmentation_examples(size, expect):
    sim = Simulator(Topology().add_node("w"))
    w = StreamWriter(AppFace(sim, "w"), STREAM, WRITER_ID)
    w.write(bytes(size))
    w.close()
    got = [(len(o.payload), o.final_block_id) for o in (w.segment_object(i) for i in range(len(expect)))]
    assert got == expect


def test_chunk():
    assert chunk(b"abcdefg", 3) == ([b"abc", b"def"], b"g")
    assert chunk(b"", 3) == ([], b"")


def test_write_after_close():
    sim = Simulator(Topology().add_node("w"))
    w = StreamWriter(AppFace(sim, "w"), STREAM, WRITER_ID)
    w.close()
    with pytest.raises(StreamClosed):
        w.write(b"x")
    with pytest.raises(StreamClosed):
        w.close()


def test_flow_config_validation():
    for bad in ({"segment_size": 0}, {"window": 0}, {"rto": 0}, {"max_retries": -1},
                {"segment_size": 70000}):
        with pytest.raises(ValueError):
            FlowConfig(**bad)


class Pair:
    """A writer on ``w`` and a reader on ``r`` joined by one link."""

    def __init__(self, cfg=FlowConfig(), drop=None, seed=1, key=None, identity=WRITER_ID):
        self.sim = Simulator(Topology().add_link("r", "w", 10, drop), seed=seed, capture=True)
        self.writer = StreamWriter(AppFace(self.sim, "w"), STREAM, identity, cfg, key)
        self.reader = StreamReader(AppFace(self.sim, "r"), STREAM, cfg,
                                   verify=lambda o: verify_object(o, identity.public),
                                   recv_key=key)
        self.writer.start()

    def transfer(self, data, max_time=600_000):
        self.writer.write(data)
        self.writer.close()
        self.reader.start()
        return self.sim.run_until_idle(max_time)

    def interests(self, trace):
        return [r for r in trace if r.node == "r" and r.direction is Direction.SEND
                and r.kind is Kind.INTEREST]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 6000), st.sampled_from([7, 512, 1024]))
def test_close_semantics(n, size):
    """Final object names itself; readers never ask past the final segment once known."""
    data = random.Random(n).randbytes(n)
    p = Pair(FlowConfig(segment_size=size, window=8))
    trace = p.transfer(data)
    assert p.reader.complete and bytes(p.reader.received) == data

    expected = oracle_segments(data, size)
    final = len(expected) - 1
    objects = [m for rec, m in p.sim.captured if rec.node == "w" and rec.direction is Direction.SEND]
    finals = {o.segment: o for o in objects if o.final_block_id is not None}
    assert list(finals) == [final] and finals[final].final_block_id == final
    assert finals[final].payload == expected[-1][0]

    learned_at = next(i for i, r in enumerate(trace) if r.node == "r" and r.direction is Direction.RECV
                      and r.kind is Kind.OBJECT
                      and trace_checks.split_segment(r.name_uri)[1] == final)
    for r in trace[learned_at:]:
        if r.node == "r" and r.direction is Direction.SEND:
            assert trace_checks.split_segment(r.name_uri)[1] <= final


def test_window_bounds_initial_burst():
    p = Pair(FlowConfig(window=8))
    p.writer.write(bytes(20 * 1024))
    p.writer.close()
    p.reader.start()
    # Before any answer arrives exactly a window's worth is in flight.
    assert p.reader.interests_sent == 8
    trace = p.sim.run_until_idle()
    assert max(trace_checks.reader_in_flight(trace, "r", STREAM.to_uri())) <= 8
    assert p.reader.max_in_flight == 8


def test_reader_before_writer_has_data():
    p = Pair()
    p.reader.start()
    p.sim.schedule(300, p.writer.write, b"late bytes")
    p.sim.schedule(300, p.writer.close)
    p.sim.run_until_idle()
    assert bytes(p.reader.received) == b"late bytes"
    assert p.reader.retransmissions == 0


@pytest.mark.parametrize("order", list(itertools.permutations(range(4))))
def test_in_order_delivery_for_any_arrival_order(order):
    sim = Simulator(Topology().add_node("r"))
    face = AppFace(sim, "r")
    reader = StreamReader(face, STREAM, FlowConfig(segment_size=4, window=8))
    reader.start()
    data = b"abcdefghijklmn"
    writer = StreamWriter(AppFace(sim, "r"), STREAM, WRITER_ID, FlowConfig(segment_size=4))
    writer.write(data)
    writer.close()
    delivered = b"".join(reader.on_object(writer.segment_object(i)) for i in order)
    assert delivered == data and reader.complete


def test_scripted_single_drop_costs_one_retransmission():
    # Link transmission 2 is the first object (Interest 0, Interest 1 go first).
    p = Pair(FlowConfig(window=2), drop=DropPolicy.scripted({2}))
    trace = p.transfer(bytes(3000))
    assert bytes(p.reader.received) == bytes(3000)
    assert p.reader.retransmissions == 1
    assert trace_checks.retransmissions(trace, "r", STREAM.to_uri()) == 1


def test_total_loss_stalls_after_max_retries():
    cfg = FlowConfig(window=2, rto=100, max_retries=3)
    p = Pair(cfg, drop=DropPolicy.bernoulli(1.0))
    p.transfer(bytes(5000))
    assert p.reader.error is not None and not p.reader.complete
    assert p.reader.error.segment == 0
    # Both in-flight segments time out in lockstep; segment 0 exhausts first.
    assert p.reader.retransmissions == 3 + 3
    assert not p.reader.state.pending


def test_corrupted_signature_is_re_requested():
    p = Pair()
    corrupted = []

    def corrupt_first(sender, receiver, m):
        if isinstance(m, ContentObject) and not corrupted:
            corrupted.append(m.name)
            return replace(m, signature=bytes(len(m.signature)))
        return m

    p.sim.intercept = corrupt_first
    trace = p.transfer(bytes(3000))
    assert bytes(p.reader.received) == bytes(3000)
    assert p.reader.rejected == 1
    assert sum(1 for r in p.interests(trace) if r.name_uri == corrupted[0].to_uri()) == 2


@pytest.mark.parametrize("mode", cs.MODES)
def test_sealed_transfer(mode):
    key = cs.new_session_key(random.Random(1), mode)
    p = Pair(key=key, identity=cs.generate_identity(b"\x01" * 32, mode))
    data = random.Random(2).randbytes(5000)
    p.transfer(data)
    assert bytes(p.reader.received) == data
    seg0 = p.writer.segment_object(0)
    assert len(seg0.payload) == 1024 + cs.SEAL_OVERHEAD
    assert seg0.payload[:1024] != data[:1024]


def test_wrong_key_is_treated_as_loss():
    key = cs.new_session_key(random.Random(1))
    p = Pair(FlowConfig(rto=100, max_retries=2), key=key)
    p.reader.recv_key = cs.new_session_key(random.Random(2))
    p.transfer(b"secret")
    assert p.reader.error is not None and p.reader.rejected == 3
    assert p.reader.received == b""


def test_mismatched_final_block_id_is_rejected():
    sim = Simulator(Topology().add_node("r"))
    reader = StreamReader(AppFace(sim, "r"), STREAM)
    reader.start()
    bad = ContentObject(segment_name(STREAM, 0), b"x", final_block_id=5)
    assert reader.on_object(bad) == b"" and reader.rejected == 1
