"""Segmented byte streams over named data.

A writer publishes its stream as Content Objects named ``stream/<segment>``
and answers read Interests on demand. Closing a stream marks the last
segment with a FinalBlockID equal to its own segment number; if nothing is
left to send, that last segment is empty.

A reader keeps up to ``window`` segment Interests in flight, re-expresses an
Interest after ``rto`` ms without an answer, and delivers bytes to the
application strictly in order. Once it learns the final segment it stops
asking for anything beyond it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from . import crypto_suite
from .ccn_core import (
    ContentKind,
    ContentObject,
    Interest,
    Name,
    is_segment,
    parse_segment,
    segment_name,
    sign_object,
)
from .crypto_suite import AuthFailure, IdentityKeyPair, SessionKey
from .fabric import AppFace, Timer

# Leaves room for the seal tag, name and signature inside one 16-bit TLV.
MAX_SEGMENT_SIZE = 60000


class StreamError(Exception):
    pass


class StreamClosed(StreamError):
    pass


class StreamStalled(StreamError):
    def __init__(self, stream: Name, segment: int):
        super().__init__(f"{stream}: segment {segment} unanswered after max retries")
        self.stream = stream
        self.segment = segment


@dataclass(frozen=True)
class FlowConfig:
    segment_size: int = 1024
    window: int = 8
    rto: int = 500
    max_retries: int = 5

    def __post_init__(self):
        if not 1 <= self.segment_size <= MAX_SEGMENT_SIZE:
            raise ValueError(f"segment_size must be in [1, {MAX_SEGMENT_SIZE}]")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.rto < 1:
            raise ValueError("rto must be >= 1 ms")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def chunk(data: bytes, segment_size: int) -> tuple[list[bytes], bytes]:
    """Split ``data`` into full segments and the residual tail."""
    full = len(data) - len(data) % segment_size
    return [data[i:i + segment_size] for i in range(0, full, segment_size)], data[full:]


@dataclass
class SendState:
    stream: Name
    next_segment: int = 0
    buffered: bytearray = field(default_factory=bytearray)
    closed: bool = False
    final_segment: int | None = None


@dataclass
class RecvState:
    stream: Name
    delivered_up_to: int = 0  # next segment owed to the application
    out_of_order: dict[int, bytes] = field(default_factory=dict)
    pending: dict[int, Timer] = field(default_factory=dict)
    final_seen: int | None = None
    retries: dict[int, int] = field(default_factory=dict)


class StreamWriter:
    """Publishes one stream. Objects are built and signed when first requested."""

    def __init__(self, face: AppFace, stream: Name, identity: IdentityKeyPair,
                 cfg: FlowConfig = FlowConfig(), send_key: SessionKey | None = None):
        self.face = face
        self.cfg = cfg
        self.identity = identity
        self.send_key = send_key
        self.state = SendState(stream)
        self._chunks: list[bytes] = []
        self._objects: dict[int, ContentObject] = {}
        self._waiting: set[int] = set()
        self._registered = False

    @property
    def stream(self) -> Name:
        return self.state.stream

    @property
    def closed(self) -> bool:
        return self.state.closed

    def start(self) -> None:
        if not self._registered:
            self.face.register(self.stream, self._on_interest)
            self._registered = True

    def stop(self) -> None:
        if self._registered:
            self.face.unregister(self.stream)
            self._registered = False

    def write(self, data: bytes) -> None:
        ss = self.state
        if ss.closed:
            raise StreamClosed(str(ss.stream))
        if not data:
            return
        ss.buffered += data
        full, rest = chunk(bytes(ss.buffered), self.cfg.segment_size)
        if full:
            self._chunks.extend(full)
            ss.buffered = bytearray(rest)
            ss.next_segment = len(self._chunks)
            self._serve_waiting()

    def close(self) -> None:
        ss = self.state
        if ss.closed:
            raise StreamClosed(str(ss.stream))
        self._chunks.append(bytes(ss.buffered))
        ss.buffered = bytearray()
        ss.closed = True
        ss.final_segment = len(self._chunks) - 1
        ss.next_segment = len(self._chunks)
        self._serve_waiting()

    def segment_object(self, segment: int) -> ContentObject:
        obj = self._objects.get(segment)
        if obj is None:
            plaintext = self._chunks[segment]
            if self.send_key is not None:
                ctx = crypto_suite.seal_context(self.stream.wire, segment)
                payload = crypto_suite.seal_payload(self.send_key, ctx, plaintext)
            else:
                payload = plaintext
            final = segment if segment == self.state.final_segment else None
            obj = sign_object(
                ContentObject(segment_name(self.stream, segment), payload,
                              ContentKind.DATA, final),
                self.identity,
            )
            self._objects[segment] = obj
        return obj

    def _on_interest(self, interest: Interest) -> None:
        name = interest.name
        if len(name) != len(self.stream) + 1 or not is_segment(name.components[-1]):
            return
        segment = parse_segment(name.components[-1])
        if segment < len(self._chunks):
            self.face.put(self.segment_object(segment))
        elif not self.state.closed:
            self._waiting.add(segment)

    def _serve_waiting(self) -> None:
        ready = sorted(s for s in self._waiting if s < len(self._chunks))
        for s in ready:
            self._waiting.discard(s)
            self.face.put(self.segment_object(s))
        if self.state.closed:
            self._waiting.clear()


class StreamReader:
    """Fetches one remote stream with a fixed window of segment Interests.

    ``verify`` decides whether a received object is authentic. Objects that
    fail verification or unsealing are treated like loss: the segment is
    requested again.
    """

    def __init__(self, face: AppFace, stream: Name, cfg: FlowConfig = FlowConfig(),
                 verify: Callable[[ContentObject], bool] | None = None,
                 recv_key: SessionKey | None = None,
                 on_data: Callable[[bytes], None] | None = None,
                 on_complete: Callable[[], None] | None = None,
                 on_error: Callable[[StreamStalled], None] | None = None):
        self.face = face
        self.cfg = cfg
        self.verify = verify
        self.recv_key = recv_key
        self.on_data = on_data
        self.on_complete = on_complete
        self.on_error = on_error
        self.state = RecvState(stream)
        self.next_request = 0
        self.complete = False
        self.error: StreamStalled | None = None
        self.received = bytearray()
        self.retransmissions = 0
        self.rejected = 0
        self.max_in_flight = 0
        self.interests_sent = 0

    @property
    def stream(self) -> Name:
        return self.state.stream

    @property
    def active(self) -> bool:
        return not self.complete and self.error is None

    def start(self) -> None:
        self._fill()

    def stop(self) -> None:
        rs = self.state
        for seg, timer in rs.pending.items():
            timer.cancel()
            self.face.cancel(segment_name(rs.stream, seg))
        rs.pending.clear()

    def _fill(self) -> None:
        rs = self.state
        while self.active and len(rs.pending) < self.cfg.window:
            seg = self.next_request
            if rs.final_seen is not None and seg > rs.final_seen:
                break
            self.next_request += 1
            self._express(seg)
        self.max_in_flight = max(self.max_in_flight, len(rs.pending))

    def _express(self, seg: int) -> None:
        rs = self.state
        self.face.express(segment_name(rs.stream, seg), self.on_object)
        self.interests_sent += 1
        rs.pending[seg] = self.face.schedule(self.cfg.rto, self.on_timeout, seg)

    def on_object(self, obj: ContentObject) -> bytes:
        """Handle one segment object; returns the bytes newly delivered in order."""
        rs = self.state
        if not self.active or obj.name[:-1] != rs.stream:
            return b""
        try:
            seg = obj.segment
        except ValueError:
            return b""
        if seg not in rs.pending:
            return b""
        payload = self._authenticate(obj, seg)
        if payload is None:
            self.rejected += 1
            rs.pending.pop(seg).cancel()
            self._retry(seg)
            return b""

        rs.pending.pop(seg).cancel()
        rs.out_of_order[seg] = payload
        if obj.final_block_id is not None:
            rs.final_seen = seg
            for late in [s for s in rs.pending if s > seg]:
                rs.pending.pop(late).cancel()
                self.face.cancel(segment_name(rs.stream, late))

        out = bytearray()
        while rs.delivered_up_to in rs.out_of_order:
            out += rs.out_of_order.pop(rs.delivered_up_to)
            rs.delivered_up_to += 1
        delivered = bytes(out)
        if delivered:
            self.received += delivered
            if self.on_data is not None:
                self.on_data(delivered)
        if rs.final_seen is not None and rs.delivered_up_to > rs.final_seen:
            self.complete = True
            self.stop()
            if self.on_complete is not None:
                self.on_complete()
        else:
            self._fill()
        return delivered

    def _authenticate(self, obj: ContentObject, seg: int) -> bytes | None:
        if obj.kind is not ContentKind.DATA:
            return None
        if obj.final_block_id is not None and obj.final_block_id != seg:
            return None
        if self.verify is not None and not self.verify(obj):
            return None
        if self.recv_key is None:
            return obj.payload
        ctx = crypto_suite.seal_context(self.stream.wire, seg)
        try:
            return crypto_suite.open_payload(self.recv_key, ctx, obj.payload)
        except AuthFailure:
            return None

    def on_timeout(self, seg: int) -> None:
        if seg in self.state.pending and self.active:
            del self.state.pending[seg]
            self._retry(seg)

    def _retry(self, seg: int) -> None:
        rs = self.state
        rs.retries[seg] = rs.retries.get(seg, 0) + 1
        if rs.retries[seg] > self.cfg.max_retries:
            self.error = StreamStalled(rs.stream, seg)
            self.stop()
            if self.on_error is not None:
                self.on_error(self.error)
            return
        self.retransmissions += 1
        self._express(seg)
