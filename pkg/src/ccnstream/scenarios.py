"""Canned scenarios: topologies, party scripts and the expectations each run must meet."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Callable

from . import crypto_suite, trace_checks
from .bistream import (
    AcceptPayload,
    Endpoint,
    NamespacePolicy,
    OpenRejected,
    RejectReason,
    Session,
    SessionState,
)
from .ccn_core import ContentObject, Name, segment_name
from .crypto_suite import KeyStore, SEAL_OVERHEAD
from .fabric import Direction, DropPolicy, Kind, Simulator, Topology, TraceRecord
from .stream_io import FlowConfig, chunk

SEND, RECV = Direction.SEND, Direction.RECV


@dataclass(frozen=True)
class Flags:
    seed: int = 1
    crypto: str = "null"
    drop_rate: float | None = None
    latency_ms: int = 10
    segment_size: int = 1024
    window: int = 8
    rto_ms: int = 500
    max_retries: int = 5
    max_time: int | None = None
    open_retries: int = 3
    open_timeout_ms: int = 1000
    pit_timeout_ms: int = 4000

    @property
    def flow(self) -> FlowConfig:
        return FlowConfig(self.segment_size, self.window, self.rto_ms, self.max_retries)


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class ScenarioResult:
    scenario: str
    flags: Flags
    sim: Simulator
    parties: dict[str, Endpoint]
    sessions: dict[str, Session]
    payloads: dict[str, bytes]
    checks: list[Check] = field(default_factory=list)

    @property
    def trace(self) -> list[TraceRecord]:
        return self.sim.trace

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def expect(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append(Check(name, bool(ok), detail))

    def expect_none(self, name: str, problems: list[str]) -> None:
        self.expect(name, not problems, problems[0] if problems else "")


@dataclass(frozen=True)
class Scenario:
    id: str
    title: str
    build: Callable[[Flags], ScenarioResult]
    max_time: int = 120_000
    default_drop: float = 0.0


def identity_seed(seed: int, party: str) -> bytes:
    return hashlib.sha256(f"ccnstream/{seed}/{party}".encode()).digest()


def payload_for(seed: int, party: str, size: int) -> bytes:
    return random.Random(f"ccnstream/{seed}/{party}/payload").randbytes(size)


class _World:
    def __init__(self, flags: Flags, scenario: Scenario, links: list[tuple[str, str, int]]):
        self.flags = flags
        drop_rate = scenario.default_drop if flags.drop_rate is None else flags.drop_rate
        drop = DropPolicy.bernoulli(drop_rate) if drop_rate > 0 else DropPolicy.none()
        topo = Topology()
        for a, b, scale in links:
            topo.add_link(a, b, flags.latency_ms * scale, drop)
        self.topology = topo
        self.sim = Simulator(topo, seed=flags.seed, pit_timeout=flags.pit_timeout_ms, capture=True)
        self.identities = {
            n: crypto_suite.generate_identity(identity_seed(flags.seed, n), flags.crypto)
            for n in topo.nodes
        }
        self.key_store = KeyStore(self.identities.values())
        self.parties = {
            n: Endpoint(self.sim, n, self.identities[n], self.key_store, flags.flow,
                        flags.open_retries, flags.open_timeout_ms)
            for n in topo.nodes
        }
        self.result = ScenarioResult(scenario.id, flags, self.sim, self.parties, {}, {})

    def send_on_establish(self, party: str, size: int) -> Callable[[Session], None]:
        data = payload_for(self.flags.seed, party, size)
        self.result.payloads[party] = data

        def go(session: Session) -> None:
            session.write(data)
            session.close()
        return go


# -- trace helpers ----------------------------------------------------------------


def _records(trace, node=None, direction=None, kind=None, ck=None):
    return [
        (i, r) for i, r in enumerate(trace)
        if (node is None or r.node == node) and (direction is None or r.direction is direction)
        and (kind is None or r.kind is kind) and (ck is None or r.content_kind == ck)
    ]


def _objects(result: ScenarioResult, node: str, ck: str) -> list[ContentObject]:
    return [m for r, m in result.sim.captured
            if r.node == node and r.direction is SEND and r.content_kind == ck]


def _seg_uri(stream: Name, seg: int) -> str:
    return segment_name(stream, seg).to_uri()


def _common_checks(res: ScenarioResult, topology: Topology) -> None:
    res.expect_none("accept/reject names equal their Open Interest names",
                    trace_checks.response_name_exactness(res.trace))
    res.expect_none("objects follow the Interest reverse path", trace_checks.reverse_path(res.trace))
    res.expect_none("flow balance (SEND = RECV + link DROP)",
                    trace_checks.flow_balance(res.trace, topology))


def _fidelity(res: ScenarioResult, a: str, b: str) -> None:
    sa, sb = res.sessions[a], res.sessions[b]
    res.expect(f"{b} received exactly what {a} wrote ({len(res.payloads[a])} bytes)",
               sb.remote_complete and sb.received == res.payloads[a])
    res.expect(f"{a} received exactly what {b} wrote ({len(res.payloads[b])} bytes)",
               sa.remote_complete and sa.received == res.payloads[b])


def _sealing(res: ScenarioResult, party: str, sealed: bool) -> None:
    """Compare every DATA payload a writer put on the wire with its plaintext chunk."""
    session = res.sessions[party]
    full, rest = chunk(res.payloads[party], res.flags.segment_size)
    plain = full + [rest]
    objs = [o for o in _objects(res, party, "DATA") if o.name[:-1] == session.local_stream]
    ok = bool(objs)
    for o in objs:
        p = plain[o.segment]
        if sealed:
            ok &= o.payload != p and len(o.payload) == len(p) + SEAL_OVERHEAD
        else:
            ok &= o.payload == p
    what = f"sealed (plaintext + {SEAL_OVERHEAD} bytes)" if sealed else "plaintext"
    res.expect(f"{party}'s DATA payloads are {what}", ok, f"{len(objs)} objects")


# -- scenarios --------------------------------------------------------------------

SERVICE = Name.of("bob", "srvname")


def _basic(flags: Flags, scenario: Scenario, a_bytes=2500, b_bytes=3000) -> ScenarioResult:
    w = _World(flags, scenario, [("alice", "bob", 1)])
    alice, bob = w.parties["alice"], w.parties["bob"]
    bob.serve_basic(SERVICE, on_session=w.send_on_establish("bob", b_bytes))
    sa = alice.open_basic(SERVICE)
    sa.on_established.append(w.send_on_establish("alice", a_bytes))
    w.sim.run_until_idle(flags.max_time or scenario.max_time)
    res = w.result
    res.sessions = {"alice": sa, "bob": bob.sessions[0] if bob.sessions else None}
    res.expect("both sessions established",
               sa.state is SessionState.ESTABLISHED and res.sessions["bob"] is not None)
    if res.sessions["bob"] is None:
        return res
    _fidelity(res, "alice", "bob")
    _common_checks(res, w.topology)
    return res


def build_basic(flags: Flags) -> ScenarioResult:
    res = _basic(flags, SCENARIOS["basic"])
    if res.sessions["bob"] is None:
        return res
    tr = res.trace
    sa, sb = res.sessions["alice"], res.sessions["bob"]
    open_uri = SERVICE.append(sa.local_stream.wire).to_uri()
    sends = [r for r in tr if r.direction is SEND]
    res.expect("first message is the Open Interest /bob/srvname/<alice stream>",
               sends and sends[0].node == "alice" and sends[0].kind is Kind.INTEREST
               and sends[0].name_uri == open_uri)
    res.expect("second message is bob's ACCEPT with the identical name",
               len(sends) > 1 and sends[1].node == "bob" and sends[1].content_kind == "ACCEPT"
               and sends[1].name_uri == open_uri)
    accepts = _objects(res, "bob", "ACCEPT")
    payload = AcceptPayload.decode(accepts[0].payload) if accepts else None
    res.expect("ACCEPT payload carries bob's stream name /bob/...",
               payload is not None and payload.responder_stream == sb.local_stream
               and Name.of("bob").is_prefix_of(payload.responder_stream))

    accept_send = _records(tr, "bob", SEND, ck="ACCEPT")[0][0]
    accept_recv = _records(tr, "alice", RECV, ck="ACCEPT")[0][0]
    bob_seg0 = [i for i, r in _records(tr, "bob", SEND, Kind.INTEREST)
                if r.name_uri == _seg_uri(sa.local_stream, 0)]
    alice_seg0 = [i for i, r in _records(tr, "alice", SEND, Kind.INTEREST)
                  if r.name_uri == _seg_uri(sb.local_stream, 0)]
    res.expect("bob asks for alice's segment 0 at/after sending ACCEPT",
               bob_seg0 and bob_seg0[0] > accept_send and tr[bob_seg0[0]].t >= tr[accept_send].t)
    res.expect("alice asks for bob's segment 0 only after receiving ACCEPT",
               alice_seg0 and alice_seg0[0] > accept_recv)
    data_after = {r.node for i, r in _records(tr, direction=SEND, ck="DATA") if i > accept_recv}
    res.expect("DATA then flows in both directions", data_after == {"alice", "bob"})
    return res


def _auth_pair(flags: Flags, scenario: Scenario, alice_key: bool, bob_encrypt: bool,
               size: int) -> tuple[_World, ScenarioResult]:
    w = _World(flags, scenario, [("alice", "bob", 1)])
    alice, bob = w.parties["alice"], w.parties["bob"]
    policy = NamespacePolicy().bind(w.identities["alice"], Name.of("alice"))
    bob.serve_authenticated(SERVICE, policy, encrypt=bob_encrypt,
                            on_session=w.send_on_establish("bob", size))
    key = crypto_suite.new_session_key(w.sim.rng, flags.crypto) if alice_key else None
    sa = alice.open_authenticated(SERVICE, w.identities["bob"].public, session_key=key)
    sa.on_established.append(w.send_on_establish("alice", size))
    w.sim.run_until_idle(flags.max_time or scenario.max_time)
    res = w.result
    res.sessions = {"alice": sa, "bob": bob.sessions[0] if bob.sessions else None}
    res.expect("alice's credential verified and both sessions established",
               sa.state is SessionState.ESTABLISHED and res.sessions["bob"] is not None
               and not bob.rejections)
    return w, res


def _plaintext_names(res: ScenarioResult) -> None:
    uris = " ".join(r.name_uri for r in res.trace)
    ok = True
    for party in ("alice", "bob"):
        stream = res.sessions[party].local_stream
        # The stream id component appears verbatim in both the Open name and segment names.
        ok &= stream.components[-1].decode() in uris and stream.to_uri() in uris
    res.expect("stream names appear in plaintext in the trace", ok)


def build_auth_accept(flags: Flags) -> ScenarioResult:
    w, res = _auth_pair(flags, SCENARIOS["auth-accept"], True, False, 64 * 1024)
    if not res.passed:
        return res
    sa, sb = res.sessions["alice"], res.sessions["bob"]
    res.expect("both directions use alice's session key",
               sa.send_key is not None and sa.send_key == sa.recv_key == sb.send_key == sb.recv_key)
    _sealing(res, "alice", True)
    _sealing(res, "bob", True)
    _plaintext_names(res)
    _fidelity(res, "alice", "bob")
    _common_checks(res, w.topology)
    return res


def build_encrypt_roundtrip(flags: Flags) -> ScenarioResult:
    w, res = _auth_pair(flags, SCENARIOS["encrypt-roundtrip"], False, True, 64 * 1024)
    if not res.passed:
        return res
    sa, sb = res.sessions["alice"], res.sessions["bob"]
    accept = _objects(res, "bob", "ACCEPT")[0]
    payload = AcceptPayload.decode(accept.payload)
    res.expect("ACCEPT carries bob's session key wrapped for alice",
               payload.responder_wrapped_key is not None
               and payload.responder_wrapped_key.recipient == w.identities["alice"].key_id)
    res.expect("key placement: bob sends sealed, alice sends plaintext",
               sb.send_key is not None and sa.recv_key == sb.send_key
               and sa.send_key is None and sb.recv_key is None)
    _sealing(res, "bob", True)
    _sealing(res, "alice", False)
    _plaintext_names(res)
    _fidelity(res, "alice", "bob")
    _common_checks(res, w.topology)
    return res


def build_auth_reject(flags: Flags) -> ScenarioResult:
    scenario = SCENARIOS["auth-reject"]
    w = _World(flags, scenario, [("eve", "bob", 1)])
    eve, bob = w.parties["eve"], w.parties["bob"]
    policy = NamespacePolicy().bind(w.identities["eve"], Name.of("eve"))
    bob.serve_authenticated(SERVICE, policy)
    # Eve signs with her own key but claims a stream in alice's namespace.
    claimed = eve.make_stream_name(Name.of("alice"))
    se = eve.open_authenticated(SERVICE, w.identities["bob"].public, local_stream=claimed)
    w.sim.run_until_idle(flags.max_time or scenario.max_time)
    res = w.result
    res.sessions = {"eve": se}
    tr = res.trace
    open_uri = SERVICE.append(claimed.wire).to_uri()
    rejects = _records(tr, direction=SEND, ck="REJECT")
    res.expect("exactly one REJECT, named exactly as the Open Interest",
               len(rejects) == 1 and rejects[0][1].name_uri == open_uri)
    res.expect("eve's open was rejected as UNAUTHORIZED_NAMESPACE",
               se.state is SessionState.REJECTED and isinstance(se.error, OpenRejected)
               and se.error.reason is RejectReason.UNAUTHORIZED_NAMESPACE)
    res.expect("zero ACCEPT records", not _records(tr, ck="ACCEPT"))
    res.expect("zero DATA records", not _records(tr, ck="DATA"))
    res.expect("bob never sends a read Interest", not _records(tr, "bob", SEND, Kind.INTEREST))
    last_reject = max((i for i, _ in _records(tr, ck="REJECT")), default=-1)
    res.expect("nothing is sent after the REJECT arrives",
               not [r for r in tr[last_reject + 1:] if r.direction is SEND])
    _common_checks(res, w.topology)
    return res


def _forward(flags: Flags, scenario: Scenario, second: str) -> tuple[_World, ScenarioResult]:
    # bob_1 is the anycast-nearest provider; the direct alice-second link is slower.
    w = _World(flags, scenario, [("alice", "bob_1", 1), ("bob_1", second, 1), ("alice", second, 3)])
    return w, w.result


def _forward_checks(res: ScenarioResult, w: _World, second: str) -> None:
    tr = res.trace
    sa = res.sessions["alice"]
    s2 = res.sessions[second]
    res.expect(f"ACCEPT carries {second}'s stream name",
               sa.remote_stream == s2.local_stream and Name.of(second).is_prefix_of(sa.remote_stream))
    path = [(r.node, r.direction.value) for r in tr if r.content_kind == "ACCEPT"]
    res.expect(f"ACCEPT traverses {second} -> bob_1 -> alice",
               path == [(second, "SEND"), ("bob_1", "RECV"), ("bob_1", "SEND"), ("alice", "RECV")],
               str(path))
    accept_recv = _records(tr, "alice", RECV, ck="ACCEPT")[0][0]
    res.expect("no DATA-phase record involves bob_1",
               not [r for r in tr[accept_recv + 1:] if r.node == "bob_1"])
    res.expect(f"alice's peer is {second} (its signature verified)",
               sa.peer is not None and sa.peer.key_id == w.identities[second].key_id)
    _fidelity(res, "alice", second)
    _common_checks(res, w.topology)


def build_forward(flags: Flags) -> ScenarioResult:
    scenario = SCENARIOS["forward"]
    w, res = _forward(flags, scenario, "bob_2")
    alice, bob_1, bob_2 = (w.parties[n] for n in ("alice", "bob_1", "bob_2"))
    bob_1.forward(SERVICE, Name.of("bob_2", "srvname"))
    bob_2.serve_basic(Name.of("bob_2", "srvname"), on_session=w.send_on_establish("bob_2", 2048))
    # bob_2 is also an anycast member of the service name, but farther from alice.
    bob_2.serve_basic(SERVICE, on_session=w.send_on_establish("bob_2", 2048))
    sa = alice.open_basic(SERVICE)
    sa.on_established.append(w.send_on_establish("alice", 2048))
    w.sim.run_until_idle(flags.max_time or scenario.max_time)
    res.sessions = {"alice": sa, "bob_2": bob_2.sessions[0] if bob_2.sessions else None}
    res.expect("session established between alice and bob_2",
               sa.state is SessionState.ESTABLISHED and res.sessions["bob_2"] is not None
               and not bob_1.sessions)
    if res.passed:
        _forward_checks(res, w, "bob_2")
    return res


def build_forward_3rdparty(flags: Flags) -> ScenarioResult:
    scenario = SCENARIOS["forward-3rdparty"]
    w, res = _forward(flags, scenario, "carol")
    alice, bob, carol = (w.parties[n] for n in ("alice", "bob_1", "carol"))
    bob.forward(SERVICE, Name.of("carol", "srvname"))
    carol.serve_basic(Name.of("carol", "srvname"), on_session=w.send_on_establish("carol", 2048))
    carol_id = w.identities["carol"].key_id
    bob_id = w.identities["bob_1"].key_id
    # Alice is willing to take an Accept from bob or from carol.
    sa = alice.open_basic(SERVICE, accept_signer=lambda pk: pk.key_id in (bob_id, carol_id))
    sa.on_established.append(w.send_on_establish("alice", 2048))
    w.sim.run_until_idle(flags.max_time or scenario.max_time)
    res.sessions = {"alice": sa, "carol": carol.sessions[0] if carol.sessions else None}
    res.expect("session established between alice and carol",
               sa.state is SessionState.ESTABLISHED and res.sessions["carol"] is not None)
    if res.passed:
        inner = [o for o in _objects(res, "carol", "ACCEPT")]
        res.expect("the ACCEPT alice holds is signed by carol",
                   bool(inner) and inner[0].signer == carol_id
                   and crypto_suite.verify(w.identities["carol"].public, inner[0].signed_portion,
                                           inner[0].signature))
        _forward_checks(res, w, "carol")
    return res


def build_forward_auth(flags: Flags) -> ScenarioResult:
    scenario = SCENARIOS["forward-auth"]
    w, res = _forward(flags, scenario, "bob_2")
    alice, bob_1, bob_2 = (w.parties[n] for n in ("alice", "bob_1", "bob_2"))
    bob_1.forward(SERVICE, Name.of("bob_2", "srvname"))
    policy = NamespacePolicy().bind(w.identities["alice"], Name.of("alice"))
    bob_2.serve_authenticated(Name.of("bob_2", "srvname"), policy)
    key = crypto_suite.new_session_key(w.sim.rng, flags.crypto)
    # The session key is wrapped for bob_1, which bob_2 cannot unwrap.
    sa = alice.open_authenticated(SERVICE, w.identities["bob_1"].public, session_key=key)
    w.sim.run_until_idle(flags.max_time or scenario.max_time)
    res.sessions = {"alice": sa}
    tr = res.trace
    res.expect("bob_2 rejects with BAD_CREDENTIAL",
               bob_2.rejections and bob_2.rejections[0][1] is RejectReason.BAD_CREDENTIAL)
    res.expect("alice's open ends in REJECT(BAD_CREDENTIAL)",
               sa.state is SessionState.REJECTED and isinstance(sa.error, OpenRejected)
               and sa.error.reason is RejectReason.BAD_CREDENTIAL)
    res.expect("zero ACCEPT and zero DATA records",
               not _records(tr, ck="ACCEPT") and not _records(tr, ck="DATA"))
    _common_checks(res, w.topology)
    return res


def build_loss_stress(flags: Flags) -> ScenarioResult:
    scenario = SCENARIOS["loss-stress"]
    res = _basic(flags, scenario, 1 << 20, 1 << 20)
    if res.sessions["bob"] is None:
        return res
    tr = res.trace
    sa, sb = res.sessions["alice"], res.sessions["bob"]
    retx = (trace_checks.retransmissions(tr, "alice", sb.local_stream.to_uri())
            + trace_checks.retransmissions(tr, "bob", sa.local_stream.to_uri()))
    drop_rate = scenario.default_drop if flags.drop_rate is None else flags.drop_rate
    if drop_rate > 0:
        res.expect("trace shows at least one retransmission", retx >= 1, f"{retx} retransmissions")
    peak = max(
        max(trace_checks.reader_in_flight(tr, "alice", sb.local_stream.to_uri()), default=0),
        max(trace_checks.reader_in_flight(tr, "bob", sa.local_stream.to_uri()), default=0),
    )
    res.expect(f"in-flight segment Interests never exceed window {flags.window}",
               peak <= flags.window, f"peak {peak}")
    return res


SCENARIOS: dict[str, Scenario] = {}


def _add(id, title, build, **kw):
    SCENARIOS[id] = Scenario(id, title, build, **kw)


_add("basic", "Basic stream setup: Open, Accept, then data both ways", build_basic)
_add("auth-accept", "Authenticated setup accepted; alice's session key seals both directions",
     build_auth_accept)
_add("auth-reject", "Authenticated setup rejected: eve claims alice's namespace", build_auth_reject)
_add("forward", "Anycast Open forwarded bob_1 -> bob_2; data flows alice <-> bob_2", build_forward)
_add("forward-3rdparty", "Open forwarded to unrelated carol (basic setup)", build_forward_3rdparty)
_add("forward-auth", "Authenticated Open forwarded with a key wrapped for bob_1: REJECT",
     build_forward_auth)
_add("loss-stress", "1 MiB each way with Bernoulli loss (default 5%)", build_loss_stress,
     max_time=3_600_000, default_drop=0.05)
_add("encrypt-roundtrip", "Authenticated setup, no initiator key, responder encrypts",
     build_encrypt_roundtrip)


def run_scenario(scenario_id: str, flags: Flags = Flags()) -> ScenarioResult:
    return SCENARIOS[scenario_id].build(flags)
