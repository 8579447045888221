"""Bidirectional stream setup over a named-data fabric.

An initiator publishes its own stream under a fresh name and sends an Open
Interest to a service name, with its stream name encoded as the last name
component. A provider answers with an Accept object whose name is exactly
the Open name and whose payload names the provider's stream. Each side then
reads the other's stream.

Authenticated Opens embed an OPEN_CREDENTIAL object named after the
initiator's stream and signed by the initiator; its payload is an optional
session key wrapped for the provider. The provider checks it against a
trust policy and answers Accept or Reject.

A provider reached through an anycast service name can hand the Open to a
second provider (``Endpoint.forward``). The second provider's Accept comes
back through the first one, which relays it verbatim inside its own
Accept, and data then flows directly between the initiator and the second
provider.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

from . import crypto_suite
from .ccn_core import (
    T_CONTENT_OBJECT,
    ContentKind,
    ContentObject,
    Interest,
    MalformedMessage,
    Name,
    decode_message,
    iter_tlv,
    sign_object,
    tlv,
    verify_object,
)
from .crypto_suite import (
    CryptoError,
    IdentityKeyPair,
    KeyStore,
    PublicKey,
    SessionKey,
    WrappedKey,
)
from .fabric import AppFace, Simulator, Timer
from .stream_io import FlowConfig, StreamReader, StreamStalled, StreamWriter

T_ACCEPT_STREAM = 0x10
T_WRAPPED_KEY = 0x30
T_WRAP_RECIPIENT = 0x31
T_WRAP_CIPHERTEXT = 0x32

DEFAULT_OPEN_RETRIES = 3
DEFAULT_OPEN_TIMEOUT = 1000
STREAM_ID_LEN = 8


class SetupError(Exception):
    pass


class OpenTimeout(SetupError):
    pass


class ForwardTimeout(SetupError):
    pass


class MalformedOpen(SetupError):
    pass


class ConfigurationError(SetupError):
    pass


class OpenRejected(SetupError):
    def __init__(self, reason: RejectReason):
        super().__init__(reason.name)
        self.reason = reason


class RejectReason(enum.IntEnum):
    UNTRUSTED_IDENTITY = 1
    UNAUTHORIZED_NAMESPACE = 2
    BAD_CREDENTIAL = 3
    POLICY = 4


class Role(enum.Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"


class SessionState(enum.Enum):
    PENDING = "pending"
    ESTABLISHED = "established"
    REJECTED = "rejected"
    FAILED = "failed"


# A trust policy returns None to accept, or the reason for rejecting.
TrustPolicy = Callable[[PublicKey, Name], "RejectReason | None"]


def accept_all(key: PublicKey, stream: Name) -> RejectReason | None:
    return None


class NamespacePolicy:
    """Accept an identity only for streams under the prefix bound to its key."""

    def __init__(self, bindings: dict[bytes, Name] | None = None):
        self.bindings = dict(bindings or {})

    def bind(self, key: PublicKey | IdentityKeyPair, prefix: Name) -> NamespacePolicy:
        self.bindings[key.key_id] = prefix
        return self

    def __call__(self, key: PublicKey, stream: Name) -> RejectReason | None:
        prefix = self.bindings.get(key.key_id)
        if prefix is None:
            return RejectReason.UNTRUSTED_IDENTITY
        if not prefix.is_prefix_of(stream) or len(stream) == len(prefix):
            return RejectReason.UNAUTHORIZED_NAMESPACE
        return None


def make_stream_name(prefix: Name, rng, taken: set[Name] | None = None) -> Name:
    """Append a random 8-byte stream id (as hex) to ``prefix``, redrawing on collision."""
    if not len(prefix):
        raise ValueError("stream prefix must be non-empty")
    while True:
        name = prefix.append(rng.randbytes(STREAM_ID_LEN).hex())
        if taken is None or name not in taken:
            if taken is not None:
                taken.add(name)
            return name


def encode_wrapped_key(w: WrappedKey) -> bytes:
    return tlv(T_WRAPPED_KEY, tlv(T_WRAP_RECIPIENT, w.recipient) + tlv(T_WRAP_CIPHERTEXT, w.ciphertext))


def decode_wrapped_key(data: bytes) -> WrappedKey:
    outer = list(iter_tlv(data))
    if len(outer) != 1 or outer[0][0] != T_WRAPPED_KEY:
        raise MalformedMessage("not a wrapped key")
    inner = list(iter_tlv(outer[0][1]))
    if [t for t, _ in inner] != [T_WRAP_RECIPIENT, T_WRAP_CIPHERTEXT]:
        raise MalformedMessage("wrapped key fields out of order")
    return WrappedKey(inner[0][1], inner[1][1])


@dataclass(frozen=True)
class OpenRequest:
    service_name: Name
    initiator_stream: Name
    credential: ContentObject | None = None
    wrapped_key: WrappedKey | None = None

    @property
    def interest_name(self) -> Name:
        return self.service_name.append(self.initiator_stream.wire)

    @classmethod
    def from_interest(cls, interest: Interest, service_name: Name) -> OpenRequest:
        name = interest.name
        if len(name) != len(service_name) + 1 or not service_name.is_prefix_of(name):
            raise MalformedOpen(f"{name} is not service name + one component")
        try:
            stream = Name.from_wire(name.components[-1])
        except MalformedMessage as e:
            raise MalformedOpen(str(e)) from e
        if not len(stream):
            raise MalformedOpen("empty initiator stream name")
        cred = interest.embedded_object
        wrapped = None
        if cred is not None and cred.payload:
            try:
                wrapped = decode_wrapped_key(cred.payload)
            except MalformedMessage:
                wrapped = None
        return cls(service_name, stream, cred, wrapped)


@dataclass(frozen=True)
class AcceptPayload:
    responder_stream: Name
    responder_wrapped_key: WrappedKey | None = None

    def encode(self) -> bytes:
        out = self.responder_stream.wire
        if self.responder_wrapped_key is not None:
            out += encode_wrapped_key(self.responder_wrapped_key)
        return out

    @classmethod
    def decode(cls, data: bytes) -> AcceptPayload:
        elems = list(iter_tlv(data))
        if not elems or elems[0][0] != T_ACCEPT_STREAM or len(elems) > 2:
            raise MalformedMessage("bad accept payload")
        stream = Name.from_wire(tlv(*elems[0]))
        wrapped = None
        if len(elems) == 2:
            wrapped = decode_wrapped_key(tlv(*elems[1]))
        return cls(stream, wrapped)


@dataclass(frozen=True)
class RejectPayload:
    reason: RejectReason

    def encode(self) -> bytes:
        return bytes([self.reason])

    @classmethod
    def decode(cls, data: bytes) -> RejectPayload:
        if len(data) != 1 or data[0] not in RejectReason._value2member_map_:
            raise MalformedMessage("bad reject payload")
        return cls(RejectReason(data[0]))


def build_accept(open_name: Name, payload: AcceptPayload, identity: IdentityKeyPair) -> ContentObject:
    return sign_object(ContentObject(open_name, payload.encode(), ContentKind.ACCEPT), identity)


def build_reject(open_name: Name, reason: RejectReason, identity: IdentityKeyPair) -> ContentObject:
    return sign_object(
        ContentObject(open_name, RejectPayload(reason).encode(), ContentKind.REJECT), identity
    )


def build_credential(stream: Name, identity: IdentityKeyPair,
                     wrapped: WrappedKey | None = None) -> ContentObject:
    payload = encode_wrapped_key(wrapped) if wrapped is not None else b""
    return sign_object(ContentObject(stream, payload, ContentKind.OPEN_CREDENTIAL), identity)


@dataclass(frozen=True)
class SessionContext:
    local_stream: Name
    remote_stream: Name | None
    send_key: SessionKey | None
    recv_key: SessionKey | None
    role: Role


def select_keys(role: Role, initiator_key: SessionKey | None,
                responder_key: SessionKey | None) -> tuple[SessionKey | None, SessionKey | None]:
    """Return (send_key, recv_key) for ``role``.

    An initiator-supplied key protects both directions. Otherwise a
    responder key, if any, protects only the responder's stream.
    """
    if initiator_key is not None:
        return initiator_key, initiator_key
    if role is Role.RESPONDER:
        return responder_key, None
    return None, responder_key


@dataclass
class Session:
    role: Role
    service_name: Name
    local_stream: Name
    remote_stream: Name | None = None
    send_key: SessionKey | None = field(default=None, repr=False)
    recv_key: SessionKey | None = field(default=None, repr=False)
    state: SessionState = SessionState.PENDING
    error: Exception | None = None
    peer: PublicKey | None = None
    writer: StreamWriter | None = field(default=None, repr=False)
    reader: StreamReader | None = field(default=None, repr=False)
    on_established: list[Callable[[Session], None]] = field(default_factory=list, repr=False)
    on_finished: list[Callable[[Session], None]] = field(default_factory=list, repr=False)

    @property
    def context(self) -> SessionContext:
        return SessionContext(self.local_stream, self.remote_stream,
                              self.send_key, self.recv_key, self.role)

    @property
    def received(self) -> bytes:
        return bytes(self.reader.received) if self.reader is not None else b""

    @property
    def remote_complete(self) -> bool:
        return self.reader is not None and self.reader.complete

    def write(self, data: bytes) -> None:
        self.writer.write(data)

    def close(self) -> None:
        self.writer.close()

    def _establish(self) -> None:
        self.state = SessionState.ESTABLISHED
        for cb in list(self.on_established):
            cb(self)

    def _finish(self, state: SessionState, error: Exception | None = None) -> None:
        self.state = state
        self.error = error
        for cb in list(self.on_finished):
            cb(self)


@dataclass
class _Cached:
    response: ContentObject
    expires: int
    session: Session | None = None


class Endpoint:
    """One party's stream-setup logic, bound to a node of the simulator."""

    def __init__(self, sim: Simulator, node: str, identity: IdentityKeyPair,
                 key_store: KeyStore, cfg: FlowConfig = FlowConfig(),
                 open_retries: int = DEFAULT_OPEN_RETRIES,
                 open_timeout: int = DEFAULT_OPEN_TIMEOUT):
        self.sim = sim
        self.face = AppFace(sim, node)
        self.identity = identity
        self.key_store = key_store
        self.cfg = cfg
        self.open_retries = open_retries
        self.open_timeout = open_timeout
        self.sessions: list[Session] = []
        self.rejections: list[tuple[Name, RejectReason]] = []
        self.malformed_opens = 0
        self._streams: set[Name] = set()
        self._responses: dict[Name, _Cached] = {}
        self._relaying: set[Name] = set()

    @property
    def node(self) -> str:
        return self.face.node

    @property
    def mode(self) -> str:
        return self.identity.mode

    def make_stream_name(self, prefix: Name) -> Name:
        return make_stream_name(prefix, self.face.rng, self._streams)

    def _verifier(self, expected: PublicKey | None) -> Callable[[ContentObject], bool]:
        def verify(obj: ContentObject) -> bool:
            if expected is not None:
                return verify_object(obj, expected)
            pk = self.key_store.get(obj.signer)
            return pk is not None and verify_object(obj, pk)
        return verify

    def _check_signed(self, obj: ContentObject) -> PublicKey | None:
        pk = self.key_store.get(obj.signer)
        if pk is None or not verify_object(obj, pk):
            return None
        return pk

    def _start_reader(self, session: Session) -> None:
        def done() -> None:
            session._finish(session.state)

        def stalled(err: StreamStalled) -> None:
            session._finish(SessionState.FAILED, err)

        session.reader = StreamReader(
            self.face, session.remote_stream, self.cfg,
            verify=self._verifier(session.peer), recv_key=session.recv_key,
            on_complete=done, on_error=stalled,
        )
        session.reader.start()

    # -- initiator ------------------------------------------------------------

    def open_basic(self, service_name: Name, local_stream: Name | None = None,
                   accept_signer: Callable[[PublicKey], bool] | None = None) -> Session:
        """Open a stream without authenticating to the provider.

        ``accept_signer`` decides whose Accept the initiator will take; by
        default any signer in the key store.
        """
        return self._open(service_name, local_stream, None, None, None, accept_signer)

    def open_authenticated(self, service_name: Name, responder_pk: PublicKey,
                           session_key: SessionKey | None = None,
                           local_stream: Name | None = None) -> Session:
        return self._open(service_name, local_stream, responder_pk, session_key, True, None)

    def _open(self, service_name, local_stream, responder_pk, session_key, authenticated,
              accept_signer) -> Session:
        if local_stream is None:
            local_stream = self.make_stream_name(Name.of(self.node))
        else:
            self._streams.add(local_stream)
        session = Session(Role.INITIATOR, service_name, local_stream)
        session.send_key = session_key
        session.recv_key = session_key
        session.writer = StreamWriter(self.face, local_stream, self.identity, self.cfg, session_key)
        session.writer.start()
        self.sessions.append(session)

        credential = None
        if authenticated:
            wrapped = (crypto_suite.wrap_session_key(session_key, responder_pk)
                       if session_key is not None else None)
            credential = build_credential(local_stream, self.identity, wrapped)
        request = OpenRequest(service_name, local_stream, credential)
        _Opener(self, session, request, responder_pk, accept_signer).send()
        return session

    # -- responder ------------------------------------------------------------

    def serve_basic(self, service_name: Name,
                    on_session: Callable[[Session], None] | None = None,
                    encrypt: bool = False) -> None:
        if encrypt:
            # Without a verified credential there is no key to wrap a responder session key to.
            raise ConfigurationError("basic setup cannot carry a responder session key")
        self.face.register(service_name, lambda i: self._on_open(i, service_name, None, False, on_session))

    def serve_authenticated(self, service_name: Name, policy: TrustPolicy, encrypt: bool = False,
                            on_session: Callable[[Session], None] | None = None) -> None:
        self.face.register(service_name, lambda i: self._on_open(i, service_name, policy, encrypt, on_session))

    def _cached(self, open_name: Name) -> _Cached | None:
        hit = self._responses.get(open_name)
        if hit is not None and hit.expires < self.face.now:
            del self._responses[open_name]
            return None
        return hit

    def _remember(self, open_name: Name, response: ContentObject, session: Session | None) -> None:
        ttl = max(1, self.open_retries) * self.open_timeout
        self._responses[open_name] = _Cached(response, self.face.now + ttl, session)

    def _parse_open(self, interest: Interest, service_name: Name) -> OpenRequest | None:
        try:
            return OpenRequest.from_interest(interest, service_name)
        except MalformedOpen:
            self.malformed_opens += 1
            self.face.note(interest, "malformed-open")
            return None

    def _on_open(self, interest: Interest, service_name: Name, policy: TrustPolicy | None,
                 encrypt: bool, on_session) -> None:
        request = self._parse_open(interest, service_name)
        if request is None:
            return
        open_name = interest.name
        hit = self._cached(open_name)
        if hit is not None:
            self.face.put(hit.response)
            return

        initiator_key: SessionKey | None = None
        peer: PublicKey | None = None
        if policy is not None:
            verdict = self._authenticate(request)
            if isinstance(verdict, RejectReason):
                reject = build_reject(open_name, verdict, self.identity)
                self.rejections.append((request.initiator_stream, verdict))
                self._remember(open_name, reject, None)
                self.face.put(reject)
                return
            peer, initiator_key = verdict
            reason = policy(peer, request.initiator_stream)
            if reason is not None:
                reject = build_reject(open_name, reason, self.identity)
                self.rejections.append((request.initiator_stream, reason))
                self._remember(open_name, reject, None)
                self.face.put(reject)
                return

        responder_key = None
        wrapped = None
        if initiator_key is None and encrypt:
            responder_key = crypto_suite.new_session_key(self.face.rng, self.mode)
            wrapped = crypto_suite.wrap_session_key(responder_key, peer)
        send_key, recv_key = select_keys(Role.RESPONDER, initiator_key, responder_key)

        local_stream = self.make_stream_name(Name.of(self.node))
        session = Session(Role.RESPONDER, service_name, local_stream, request.initiator_stream,
                          send_key, recv_key, peer=peer)
        session.writer = StreamWriter(self.face, local_stream, self.identity, self.cfg, send_key)
        session.writer.start()
        accept = build_accept(open_name, AcceptPayload(local_stream, wrapped), self.identity)
        self._remember(open_name, accept, session)
        self.sessions.append(session)
        self.face.put(accept)
        # Reading starts as soon as the Accept is out, before the initiator has seen it.
        self._start_reader(session)
        if on_session is not None:
            session.on_established.append(on_session)
        session._establish()

    def _authenticate(self, request: OpenRequest):
        """Check an Open credential. Returns a RejectReason or (initiator key, session key)."""
        cred = request.credential
        if (cred is None or cred.kind is not ContentKind.OPEN_CREDENTIAL
                or cred.name != request.initiator_stream):
            return RejectReason.BAD_CREDENTIAL
        pk = self.key_store.get(cred.signer)
        if pk is None:
            return RejectReason.UNTRUSTED_IDENTITY
        if not verify_object(cred, pk):
            return RejectReason.BAD_CREDENTIAL
        if cred.payload and request.wrapped_key is None:
            return RejectReason.BAD_CREDENTIAL
        key = None
        if request.wrapped_key is not None:
            try:
                key = crypto_suite.unwrap_session_key(request.wrapped_key, self.identity)
            except CryptoError:
                return RejectReason.BAD_CREDENTIAL
        return pk, key

    # -- relay ----------------------------------------------------------------

    def forward(self, service_name: Name, target_service: Name,
                forward_timeout: int | None = None, forward_retries: int = 1) -> None:
        """Serve ``service_name`` by handing every Open to ``target_service``.

        The hop Interest is ``target_service`` plus the initiator's encoded
        stream name, carrying the same credential. No session is installed
        here; if the target never answers, the initiator gets REJECT(POLICY).
        """
        timeout = forward_timeout or self.open_timeout
        self.face.register(
            service_name,
            lambda i: self._on_relay_open(i, service_name, target_service, timeout, forward_retries),
        )

    def _on_relay_open(self, interest: Interest, service_name: Name, target_service: Name,
                       timeout: int, retries: int) -> None:
        request = self._parse_open(interest, service_name)
        if request is None:
            return
        open_name = interest.name
        hit = self._cached(open_name)
        if hit is not None:
            self.face.put(hit.response)
            return
        if open_name in self._relaying:
            return
        self._relaying.add(open_name)
        hop = OpenRequest(target_service, request.initiator_stream, interest.embedded_object)
        forward_open(self, open_name, hop, timeout, retries)

    def _relay_response(self, open_name: Name, hop_response: ContentObject | None) -> None:
        self._relaying.discard(open_name)
        if hop_response is None:
            response = build_reject(open_name, RejectReason.POLICY, self.identity)
        elif hop_response.kind is ContentKind.ACCEPT:
            response = sign_object(
                ContentObject(open_name, hop_response.wire, ContentKind.ACCEPT), self.identity
            )
        else:
            response = sign_object(
                ContentObject(open_name, hop_response.payload, ContentKind.REJECT), self.identity
            )
        self._remember(open_name, response, None)
        self.face.put(response)


def forward_open(relay: Endpoint, open_name: Name, hop: OpenRequest,
                 timeout: int, retries: int) -> None:
    """Re-express an Open toward a second provider and relay its answer."""

    attempts = 0
    timer: Timer | None = None

    def on_response(obj: ContentObject) -> None:
        if obj.kind not in (ContentKind.ACCEPT, ContentKind.REJECT):
            return
        if relay._check_signed(obj) is None:
            return
        timer.cancel()
        relay._relay_response(open_name, obj)

    def send() -> None:
        nonlocal attempts, timer
        attempts += 1
        relay.face.express(hop.interest_name, on_response, hop.credential)
        timer = relay.face.schedule(timeout, expired)

    def expired() -> None:
        if attempts <= retries:
            send()
        else:
            relay.face.cancel(hop.interest_name)
            relay._relay_response(open_name, None)

    send()


class _Opener:
    """Initiator side of one Open: retransmission and response handling."""

    def __init__(self, ep: Endpoint, session: Session, request: OpenRequest,
                 responder_pk: PublicKey | None,
                 accept_signer: Callable[[PublicKey], bool] | None):
        self.ep = ep
        self.session = session
        self.request = request
        self.responder_pk = responder_pk
        self.accept_signer = accept_signer
        self.attempts = 0
        self.timer: Timer | None = None

    def send(self) -> None:
        self.attempts += 1
        self.ep.face.express(self.request.interest_name, self.on_response, self.request.credential)
        self.timer = self.ep.face.schedule(self.ep.open_timeout, self.on_timeout)

    def on_timeout(self) -> None:
        if self.session.state is not SessionState.PENDING:
            return
        if self.attempts <= self.ep.open_retries:
            self.send()
            return
        self.ep.face.cancel(self.request.interest_name)
        self.session.writer.stop()
        self.session._finish(SessionState.FAILED, OpenTimeout(str(self.request.interest_name)))

    def _trusted_outer(self, obj: ContentObject) -> PublicKey | None:
        pk = self.ep._check_signed(obj)
        if pk is None:
            return None
        if self.responder_pk is not None and pk.key_id != self.responder_pk.key_id:
            return None
        if self.accept_signer is not None and not self.accept_signer(pk):
            return None
        return pk

    def on_response(self, obj: ContentObject) -> None:
        session = self.session
        if session.state is not SessionState.PENDING or obj.name != self.request.interest_name:
            return
        outer = self._trusted_outer(obj)
        if outer is None:
            # Untrusted answer: treat as lost and let the retransmission timer run.
            return
        if obj.kind is ContentKind.REJECT:
            try:
                reason = RejectPayload.decode(obj.payload).reason
            except MalformedMessage:
                return
            self.timer.cancel()
            session.writer.stop()
            session._finish(SessionState.REJECTED, OpenRejected(reason))
            return
        if obj.kind is not ContentKind.ACCEPT:
            return
        try:
            payload, peer = self._accept_payload(obj, outer)
        except (MalformedMessage, ValueError):
            return
        if peer is None:
            return
        responder_key = None
        if payload.responder_wrapped_key is not None:
            try:
                responder_key = crypto_suite.unwrap_session_key(
                    payload.responder_wrapped_key, self.ep.identity)
            except CryptoError:
                return
        own = session.send_key
        session.send_key, session.recv_key = select_keys(Role.INITIATOR, own, responder_key)
        session.remote_stream = payload.responder_stream
        session.peer = peer
        self.timer.cancel()
        self.ep._start_reader(session)
        session._establish()

    def _accept_payload(self, obj: ContentObject, outer: PublicKey):
        data = obj.payload
        if data and data[0] == T_CONTENT_OBJECT:
            inner = decode_message(data)
            if not isinstance(inner, ContentObject) or inner.kind is not ContentKind.ACCEPT:
                raise MalformedMessage("relayed accept is not an ACCEPT object")
            peer = self.ep._check_signed(inner)
            if peer is not None and self.accept_signer is not None and not self.accept_signer(peer):
                peer = None
            return AcceptPayload.decode(inner.payload), peer
        return AcceptPayload.decode(data), outer
