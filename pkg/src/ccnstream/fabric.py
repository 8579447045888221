"""Deterministic discrete-event simulator of a CCN forwarding fabric.

Nodes are joined by bidirectional links with integer millisecond latency
and an optional drop policy. Each node runs a forwarder with a FIB (longest
prefix match over registered prefixes, routed along shortest paths) and a
PIT that remembers inbound faces so Content Objects retrace the Interest's
path. Face 0 on every node is the local application face.

Every link transmission produces a SEND record and then either a RECV record
at the peer or a DROP record; forwarder-level discards (duplicate nonce, no
route, unsolicited object) are DROP records too. The trace is a pure
function of (topology, scenario, seed).
"""

from __future__ import annotations

import enum
import heapq
import json
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .ccn_core import ContentObject, Interest, Message, Name, NONCE_LEN

APP_FACE = 0
DEFAULT_PIT_TIMEOUT = 4000

NodeId = str
FaceId = int


class FabricError(Exception):
    pass


class DuplicateRegistration(FabricError):
    pass


class TimeLimitExceeded(FabricError):
    pass


class UnknownNode(FabricError, KeyError):
    pass


class Direction(str, enum.Enum):
    SEND = "SEND"
    RECV = "RECV"
    DROP = "DROP"


class Kind(str, enum.Enum):
    INTEREST = "INTEREST"
    OBJECT = "OBJECT"


class DropMode(enum.Enum):
    NONE = "none"
    BERNOULLI = "bernoulli"
    SCRIPTED = "scripted"


@dataclass(frozen=True)
class DropPolicy:
    """Which transmissions a link loses.

    ``SCRIPTED`` indices count transmissions on the link (both directions
    together) from 0.
    """

    mode: DropMode = DropMode.NONE
    p: float = 0.0
    indices: frozenset[int] = frozenset()

    @classmethod
    def none(cls) -> DropPolicy:
        return cls()

    @classmethod
    def bernoulli(cls, p: float) -> DropPolicy:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"drop probability out of range: {p}")
        return cls(DropMode.BERNOULLI, p=p)

    @classmethod
    def scripted(cls, indices: Iterable[int]) -> DropPolicy:
        return cls(DropMode.SCRIPTED, indices=frozenset(indices))


@dataclass(frozen=True)
class Link:
    a: NodeId
    b: NodeId
    latency: int = 10
    drop: DropPolicy = DropPolicy()

    def __post_init__(self):
        if self.latency < 0:
            raise ValueError("latency must be >= 0")
        if self.a == self.b:
            raise ValueError("self-links are not allowed")


@dataclass
class Topology:
    nodes: list[NodeId] = field(default_factory=list)
    links: list[Link] = field(default_factory=list)

    def add_node(self, node: NodeId) -> Topology:
        if node not in self.nodes:
            self.nodes.append(node)
        return self

    def add_link(self, a: NodeId, b: NodeId, latency: int = 10,
                 drop: DropPolicy | None = None) -> Topology:
        self.add_node(a)
        self.add_node(b)
        self.links.append(Link(a, b, latency, drop or DropPolicy()))
        return self


@dataclass(frozen=True)
class FibEntry:
    prefix: Name
    next_face: FaceId


@dataclass
class PitEntry:
    interest_name: Name
    nonces: set[bytes] = field(default_factory=set)
    inbound_faces: set[FaceId] = field(default_factory=set)
    expiry: int = 0
    timer: Timer | None = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class TraceRecord:
    t: int
    node: NodeId
    direction: Direction
    kind: Kind
    name_uri: str
    size: int
    content_kind: str | None = None
    note: str = field(default="", compare=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "t": self.t,
                "node": self.node,
                "dir": self.direction.value,
                "kind": self.kind.value,
                "name": self.name_uri,
                "size": self.size,
                "ck": self.content_kind,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> TraceRecord:
        d = json.loads(line)
        return cls(d["t"], d["node"], Direction(d["dir"]), Kind(d["kind"]),
                   d["name"], d["size"], d["ck"])


def write_trace(records: Iterable[TraceRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def read_trace(path) -> list[TraceRecord]:
    with open(path, encoding="utf-8") as f:
        return [TraceRecord.from_json(line) for line in f if line.strip()]


def trace_lines(records: Iterable[TraceRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


class Timer:
    __slots__ = ("when", "fn", "args", "cancelled")

    def __init__(self, when: int, fn: Callable, args: tuple):
        self.when = when
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass
class _Face:
    link_index: int
    peer: NodeId
    peer_face: FaceId


class _Node:
    def __init__(self, node_id: NodeId):
        self.id = node_id
        self.faces: dict[FaceId, _Face] = {}
        self.pit: dict[Name, PitEntry] = {}
        self.handlers: dict[Name, Callable[[Interest], None]] = {}
        self.consumers: dict[Name, Callable[[ContentObject], None]] = {}


def _content_kind(m: Message) -> str | None:
    return m.kind.name if isinstance(m, ContentObject) else None


def _kind(m: Message) -> Kind:
    return Kind.INTEREST if isinstance(m, Interest) else Kind.OBJECT


class Simulator:
    """Event loop, forwarders and links for one scenario run.

    ``rng`` is the single seeded source of randomness for the run: nonces,
    stream identifiers, null-mode session keys and Bernoulli drops all draw
    from it.
    """

    def __init__(self, topology: Topology, seed: int = 1,
                 pit_timeout: int = DEFAULT_PIT_TIMEOUT, capture: bool = False):
        self.topology = topology
        self.rng = random.Random(seed)
        self.pit_timeout = pit_timeout
        self.now = 0
        self.trace: list[TraceRecord] = []
        self.captured: list[tuple[TraceRecord, Message]] | None = [] if capture else None
        # Test hook: (sender, receiver, message) -> message or None to drop.
        self.intercept: Callable[[NodeId, NodeId, Message], Message | None] | None = None

        self._queue: list[tuple[int, int, Timer]] = []
        self._seq = 0
        self._nodes: dict[NodeId, _Node] = {n: _Node(n) for n in topology.nodes}
        self._links = list(topology.links)
        self._link_counts = [0] * len(self._links)
        for i, link in enumerate(self._links):
            for end in (link.a, link.b):
                if end not in self._nodes:
                    raise UnknownNode(end)
            na, nb = self._nodes[link.a], self._nodes[link.b]
            fa, fb = len(na.faces) + 1, len(nb.faces) + 1
            na.faces[fa] = _Face(i, link.b, fb)
            nb.faces[fb] = _Face(i, link.a, fa)
        self._dist = {n: self._bfs(n) for n in self._nodes}
        self._registrations: dict[Name, set[NodeId]] = {}
        self._route_cache: dict[tuple[NodeId, Name], FaceId | None] = {}

    # -- time ---------------------------------------------------------------

    def schedule(self, delay: int, fn: Callable, *args) -> Timer:
        if delay < 0:
            raise ValueError("cannot schedule in the past")
        timer = Timer(self.now + delay, fn, args)
        self._seq += 1
        heapq.heappush(self._queue, (timer.when, self._seq, timer))
        return timer

    def run_until_idle(self, max_time: int | None = None) -> list[TraceRecord]:
        q = self._queue
        while q:
            when, _, timer = q[0]
            if timer.cancelled:
                heapq.heappop(q)
                continue
            if max_time is not None and when > max_time:
                raise TimeLimitExceeded(f"events pending past t={max_time} ms")
            heapq.heappop(q)
            self.now = when
            timer.fn(*timer.args)
        return self.trace

    @property
    def idle(self) -> bool:
        return all(t.cancelled for _, _, t in self._queue)

    # -- topology and routing ---------------------------------------------

    def node_ids(self) -> list[NodeId]:
        return list(self._nodes)

    def _node(self, node: NodeId) -> _Node:
        try:
            return self._nodes[node]
        except KeyError:
            raise UnknownNode(node) from None

    def _bfs(self, src: NodeId) -> dict[NodeId, int]:
        dist = {src: 0}
        todo = deque([src])
        while todo:
            n = todo.popleft()
            for face in self._nodes[n].faces.values():
                if face.peer not in dist:
                    dist[face.peer] = dist[n] + 1
                    todo.append(face.peer)
        return dist

    def hops(self, a: NodeId, b: NodeId) -> int | None:
        return self._dist[a].get(b)

    def register_prefix(self, node: NodeId, prefix: Name,
                        on_interest: Callable[[Interest], None] | None = None) -> None:
        n = self._node(node)
        if prefix in n.handlers:
            raise DuplicateRegistration(f"{node} already serves {prefix}")
        n.handlers[prefix] = on_interest or (lambda interest: None)
        self._registrations.setdefault(prefix, set()).add(node)
        self._route_cache.clear()

    def unregister_prefix(self, node: NodeId, prefix: Name) -> None:
        n = self._node(node)
        if n.handlers.pop(prefix, None) is not None:
            owners = self._registrations[prefix]
            owners.discard(node)
            if not owners:
                del self._registrations[prefix]
            self._route_cache.clear()

    def _face_for(self, node: NodeId, prefix: Name) -> FaceId | None:
        key = (node, prefix)
        if key in self._route_cache:
            return self._route_cache[key]
        owners = self._registrations.get(prefix, ())
        face: FaceId | None = None
        if node in owners:
            face = APP_FACE
        else:
            dist = self._dist[node]
            reachable = [o for o in owners if o in dist]
            if reachable:
                target = min(reachable, key=lambda o: (dist[o], o))
                to_target = self._dist[target]
                d = dist[target]
                face = min(f for f, fc in self._nodes[node].faces.items()
                           if to_target.get(fc.peer) == d - 1)
        self._route_cache[key] = face
        return face

    def fib(self, node: NodeId) -> list[FibEntry]:
        """FIB entries currently in effect at ``node``, longest prefix first."""
        entries = []
        for prefix in self._registrations:
            face = self._face_for(node, prefix)
            if face is not None:
                entries.append(FibEntry(prefix, face))
        entries.sort(key=lambda e: (-len(e.prefix), e.next_face))
        return entries

    def lookup(self, node: NodeId, name: Name) -> FaceId | None:
        """Longest-prefix match of ``name`` in ``node``'s FIB."""
        best: tuple[int, FaceId] | None = None
        for prefix in self._registrations:
            if prefix.is_prefix_of(name):
                face = self._face_for(node, prefix)
                if face is None:
                    continue
                cand = (-len(prefix), face)
                if best is None or cand < best:
                    best = cand
        return None if best is None else best[1]

    # -- application face --------------------------------------------------

    def express_interest(self, node: NodeId, interest: Interest,
                         on_object: Callable[[ContentObject], None] | None = None) -> None:
        n = self._node(node)
        if on_object is not None:
            n.consumers[interest.name] = on_object
        self._on_interest(n, APP_FACE, interest)

    def cancel_interest(self, node: NodeId, name: Name) -> None:
        self._node(node).consumers.pop(name, None)

    def put_object(self, node: NodeId, obj: ContentObject) -> None:
        self._on_object(self._node(node), APP_FACE, obj)

    def note(self, node: NodeId, message: Message, reason: str) -> None:
        """Record an application-level discard as a DROP record."""
        self._record(node, Direction.DROP, message, reason)

    # -- forwarding -----------------------------------------------------------

    def _record(self, node: NodeId, direction: Direction, m: Message, note: str = "") -> None:
        rec = TraceRecord(self.now, node, direction, _kind(m), m.name.to_uri(),
                          len(m.wire), _content_kind(m), note)
        self.trace.append(rec)
        if self.captured is not None:
            self.captured.append((rec, m))

    def _on_interest(self, n: _Node, in_face: FaceId, interest: Interest) -> None:
        name = interest.name
        entry = n.pit.get(name)
        if entry is not None:
            if interest.nonce in entry.nonces:
                self._record(n.id, Direction.DROP, interest, "duplicate")
                return
            entry.nonces.add(interest.nonce)
            self._refresh(n, entry)
            if in_face not in entry.inbound_faces:
                # Aggregated: the upstream request already pending covers this face.
                entry.inbound_faces.add(in_face)
                return
        else:
            entry = PitEntry(name, {interest.nonce}, {in_face})
            n.pit[name] = entry
            self._refresh(n, entry)

        out = self.lookup(n.id, name)
        if out is None or (out == in_face and out != APP_FACE):
            entry.inbound_faces.discard(in_face)
            if not entry.inbound_faces:
                entry.timer.cancel()
                del n.pit[name]
            self._record(n.id, Direction.DROP, interest, "no-route")
            return
        if out == APP_FACE:
            handler = self._local_handler(n, name)
            handler(interest)
        else:
            self._transmit(n, out, interest)

    def _local_handler(self, n: _Node, name: Name) -> Callable[[Interest], None]:
        best = max((p for p in n.handlers if p.is_prefix_of(name)), key=len)
        return n.handlers[best]

    def _refresh(self, n: _Node, entry: PitEntry) -> None:
        if entry.timer is not None:
            entry.timer.cancel()
        entry.expiry = self.now + self.pit_timeout
        entry.timer = self.schedule(self.pit_timeout, self._expire, n, entry)

    def _expire(self, n: _Node, entry: PitEntry) -> None:
        if n.pit.get(entry.interest_name) is entry and entry.expiry <= self.now:
            del n.pit[entry.interest_name]
            if APP_FACE in entry.inbound_faces:
                n.consumers.pop(entry.interest_name, None)

    def _on_object(self, n: _Node, in_face: FaceId, obj: ContentObject) -> None:
        entry = n.pit.pop(obj.name, None)
        if entry is None:
            self._record(n.id, Direction.DROP, obj, "unsolicited")
            return
        entry.timer.cancel()
        for face in sorted(entry.inbound_faces):
            if face == APP_FACE:
                consumer = n.consumers.pop(obj.name, None)
                if consumer is not None:
                    consumer(obj)
            elif face != in_face:
                self._transmit(n, face, obj)

    def _transmit(self, n: _Node, face_id: FaceId, m: Message) -> None:
        face = n.faces[face_id]
        link = self._links[face.link_index]
        self._record(n.id, Direction.SEND, m)
        index = self._link_counts[face.link_index]
        self._link_counts[face.link_index] += 1
        if self._dropped(link.drop, index):
            self._record(n.id, Direction.DROP, m, "link")
            return
        self.schedule(link.latency, self._arrive, n.id, face.peer, face.peer_face, m)

    def _dropped(self, policy: DropPolicy, index: int) -> bool:
        if policy.mode is DropMode.NONE:
            return False
        if policy.mode is DropMode.SCRIPTED:
            return index in policy.indices
        return self.rng.random() < policy.p

    def _arrive(self, sender: NodeId, node: NodeId, face: FaceId, m: Message) -> None:
        if self.intercept is not None:
            m = self.intercept(sender, node, m)
            if m is None:
                return
        n = self._nodes[node]
        self._record(node, Direction.RECV, m)
        if isinstance(m, Interest):
            self._on_interest(n, face, m)
        else:
            self._on_object(n, face, m)


class AppFace:
    """An application's handle on one node of the simulator."""

    def __init__(self, sim: Simulator, node: NodeId):
        sim._node(node)
        self.sim = sim
        self.node = node

    @property
    def now(self) -> int:
        return self.sim.now

    @property
    def rng(self) -> random.Random:
        return self.sim.rng

    def nonce(self) -> bytes:
        return self.sim.rng.randbytes(NONCE_LEN)

    def express(self, name: Name, on_object: Callable[[ContentObject], None],
                embedded: ContentObject | None = None) -> Interest:
        interest = Interest(name, self.nonce(), embedded)
        self.sim.express_interest(self.node, interest, on_object)
        return interest

    def cancel(self, name: Name) -> None:
        self.sim.cancel_interest(self.node, name)

    def put(self, obj: ContentObject) -> None:
        self.sim.put_object(self.node, obj)

    def register(self, prefix: Name, on_interest: Callable[[Interest], None]) -> None:
        self.sim.register_prefix(self.node, prefix, on_interest)

    def unregister(self, prefix: Name) -> None:
        self.sim.unregister_prefix(self.node, prefix)

    def schedule(self, delay: int, fn: Callable, *args) -> Timer:
        return self.sim.schedule(delay, fn, *args)

    def note(self, message: Message, reason: str) -> None:
        self.sim.note(self.node, message, reason)
