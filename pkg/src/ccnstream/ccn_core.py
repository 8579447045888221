"""Names, Interest and Content Object messages, and their TLV wire codec.

Every TLV element is ``type (1 byte) | length (uint16, big-endian) | value``.
Field order inside a message is fixed and absent optionals are omitted, so
encoding is deterministic byte-for-byte.
"""

from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, Union

from . import crypto_suite

MAX_COMPONENTS = 64
MAX_COMPONENT_LEN = 0xFFFF
MAX_SEGMENT = 1 << 48
NONCE_LEN = 8

SEGMENT_MARKER = 0x00
SEGMENT_COMPONENT_LEN = 7

T_INTEREST = 0x01
T_CONTENT_OBJECT = 0x02
T_NAME = 0x10
T_COMPONENT = 0x11
T_NONCE = 0x12
T_EMBEDDED_OBJECT = 0x13
T_PAYLOAD = 0x20
T_CONTENT_KIND = 0x21
T_FINAL_BLOCK_ID = 0x22
T_SIGNER_KEY_ID = 0x23
T_SIGNATURE = 0x24

URI_SCHEME = "ccnx:"

# RFC 3986 unreserved characters are emitted verbatim, everything else is %XX.
_UNRESERVED = frozenset(
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~"
)
_SEGMENT_RE = re.compile(r"(?:[A-Za-z0-9\-._~!$&'()*+,;=:@]|%[0-9A-Fa-f]{2})*")


class CcnError(Exception):
    """Base class for errors raised by the core message layer."""


class MalformedUri(CcnError, ValueError):
    pass


class NameTooLong(CcnError, ValueError):
    pass


class MalformedMessage(CcnError, ValueError):
    pass


class UnknownSigner(CcnError, KeyError):
    pass


class ContentKind(enum.IntEnum):
    DATA = 0
    ACCEPT = 1
    REJECT = 2
    OPEN_CREDENTIAL = 3


@dataclass(frozen=True)
class Name:
    """An ordered sequence of opaque byte-string components."""

    components: tuple[bytes, ...] = ()

    def __post_init__(self):
        comps = tuple(bytes(c) for c in self.components)
        if len(comps) > MAX_COMPONENTS:
            raise NameTooLong(f"{len(comps)} components (max {MAX_COMPONENTS})")
        for c in comps:
            if len(c) > MAX_COMPONENT_LEN:
                raise NameTooLong(f"component of {len(c)} bytes")
        object.__setattr__(self, "components", comps)

    @classmethod
    def of(cls, *components: bytes | str) -> Name:
        return cls(tuple(c.encode() if isinstance(c, str) else c for c in components))

    @classmethod
    def from_uri(cls, uri: str) -> Name:
        """Parse ``ccnx:/a/b`` or ``/a/b`` into a Name.

        Components are percent-decoded. A component made only of dots has
        three dots stripped, so ``...`` is the empty component.
        """
        if uri.startswith(URI_SCHEME):
            uri = uri[len(URI_SCHEME):]
        if not uri.startswith("/"):
            raise MalformedUri(f"URI must start with '/' or '{URI_SCHEME}/': {uri!r}")
        path = uri[1:]
        if path.endswith("/"):
            path = path[:-1]
        if not path:
            return cls()
        comps = []
        for seg in path.split("/"):
            if not _SEGMENT_RE.fullmatch(seg):
                raise MalformedUri(f"bad component {seg!r}")
            value = _percent_decode(seg)
            if value and value.strip(b".") == b"":
                if len(value) < 3:
                    raise MalformedUri(f"reserved component {seg!r}")
                value = value[3:]
            elif not value:
                raise MalformedUri("empty component (use '...')")
            comps.append(value)
        return cls(tuple(comps))

    def to_uri(self) -> str:
        return URI_SCHEME + "/" + "/".join(_escape_component(c) for c in self.components)

    def __str__(self) -> str:
        return self.to_uri()

    def __len__(self) -> int:
        return len(self.components)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Name(self.components[i])
        return self.components[i]

    def append(self, component: bytes | str) -> Name:
        if isinstance(component, str):
            component = component.encode()
        if len(self.components) >= MAX_COMPONENTS:
            raise NameTooLong(f"cannot append to a {len(self.components)}-component name")
        return Name(self.components + (bytes(component),))

    def is_prefix_of(self, other: Name) -> bool:
        n = len(self.components)
        return n <= len(other.components) and other.components[:n] == self.components

    @cached_property
    def wire(self) -> bytes:
        return tlv(T_NAME, b"".join(tlv(T_COMPONENT, c) for c in self.components))

    @classmethod
    def from_wire(cls, data: bytes) -> Name:
        """Decode a Name TLV that spans all of ``data``."""
        reader = _Reader(data)
        value = reader.expect(T_NAME)
        reader.finish()
        return _decode_name_value(value)


def _escape_component(c: bytes) -> str:
    if c.strip(b".") == b"":
        c = c + b"..."
    return "".join(chr(b) if b in _UNRESERVED else f"%{b:02X}" for b in c)


def _percent_decode(seg: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(seg):
        ch = seg[i]
        if ch == "%":
            out.append(int(seg[i + 1:i + 3], 16))
            i += 3
        else:
            out.append(ord(ch))
            i += 1
    return bytes(out)


def name_parse(uri: str) -> Name:
    return Name.from_uri(uri)


def name_to_uri(n: Name) -> str:
    return n.to_uri()


def name_append(n: Name, c: bytes | str) -> Name:
    return n.append(c)


def name_is_prefix(prefix: Name, n: Name) -> bool:
    return prefix.is_prefix_of(n)


def segment_component(segment: int) -> bytes:
    """Encode a segment number as marker 0x00 followed by 6 big-endian bytes."""
    if not 0 <= segment < MAX_SEGMENT:
        raise ValueError(f"segment number out of range: {segment}")
    return bytes([SEGMENT_MARKER]) + segment.to_bytes(6, "big")


def parse_segment(component: bytes) -> int:
    if len(component) != SEGMENT_COMPONENT_LEN or component[0] != SEGMENT_MARKER:
        raise ValueError("component is not a segment number")
    return int.from_bytes(component[1:], "big")


def is_segment(component: bytes) -> bool:
    return len(component) == SEGMENT_COMPONENT_LEN and component[0] == SEGMENT_MARKER


def segment_name(stream: Name, segment: int) -> Name:
    return stream.append(segment_component(segment))


@dataclass(frozen=True)
class ContentObject:
    name: Name
    payload: bytes = b""
    kind: ContentKind = ContentKind.DATA
    final_block_id: int | None = None
    signer: bytes = b""
    signature: bytes = field(default=b"", repr=False)

    @property
    def segment(self) -> int:
        """Segment number carried by the last name component."""
        return parse_segment(self.name.components[-1])

    @cached_property
    def signed_portion(self) -> bytes:
        parts = [
            self.name.wire,
            tlv(T_PAYLOAD, self.payload),
            tlv(T_CONTENT_KIND, bytes([self.kind])),
        ]
        if self.final_block_id is not None:
            parts.append(tlv(T_FINAL_BLOCK_ID, self.final_block_id.to_bytes(6, "big")))
        parts.append(tlv(T_SIGNER_KEY_ID, self.signer))
        return b"".join(parts)

    @cached_property
    def wire(self) -> bytes:
        return tlv(T_CONTENT_OBJECT, self.signed_portion + tlv(T_SIGNATURE, self.signature))


@dataclass(frozen=True)
class Interest:
    name: Name
    nonce: bytes
    embedded_object: ContentObject | None = None

    def __post_init__(self):
        if len(self.nonce) != NONCE_LEN:
            raise ValueError(f"nonce must be {NONCE_LEN} bytes")

    @cached_property
    def wire(self) -> bytes:
        body = self.name.wire + tlv(T_NONCE, self.nonce)
        if self.embedded_object is not None:
            body += tlv(T_EMBEDDED_OBJECT, self.embedded_object.wire)
        return tlv(T_INTEREST, body)


Message = Union[Interest, ContentObject]


def tlv(t: int, value: bytes) -> bytes:
    if len(value) > 0xFFFF:
        raise MalformedMessage(f"TLV 0x{t:02x} value too long ({len(value)} bytes)")
    return struct.pack(">BH", t, len(value)) + value


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def at_end(self) -> bool:
        return self.pos >= len(self.data)

    def peek_type(self) -> int | None:
        return None if self.at_end() else self.data[self.pos]

    def read(self) -> tuple[int, bytes]:
        if self.pos + 3 > len(self.data):
            raise MalformedMessage("truncated TLV header")
        t, n = struct.unpack_from(">BH", self.data, self.pos)
        start = self.pos + 3
        if start + n > len(self.data):
            raise MalformedMessage(f"TLV 0x{t:02x} length {n} overruns buffer")
        self.pos = start + n
        return t, bytes(self.data[start:start + n])

    def expect(self, t: int) -> bytes:
        got, value = self.read()
        if got != t:
            raise MalformedMessage(f"expected TLV 0x{t:02x}, got 0x{got:02x}")
        return value

    def optional(self, t: int) -> bytes | None:
        return self.expect(t) if self.peek_type() == t else None

    def finish(self) -> None:
        if not self.at_end():
            raise MalformedMessage("trailing bytes")


def iter_tlv(data: bytes) -> Iterator[tuple[int, bytes]]:
    reader = _Reader(data)
    while not reader.at_end():
        yield reader.read()


def _decode_name_value(value: bytes) -> Name:
    comps = []
    for t, v in iter_tlv(value):
        if t != T_COMPONENT:
            raise MalformedMessage(f"unexpected TLV 0x{t:02x} inside Name")
        comps.append(v)
    try:
        return Name(tuple(comps))
    except NameTooLong as e:
        raise MalformedMessage(str(e)) from e


def _decode_object_value(value: bytes) -> ContentObject:
    r = _Reader(value)
    name = _decode_name_value(r.expect(T_NAME))
    payload = r.expect(T_PAYLOAD)
    kind_raw = r.expect(T_CONTENT_KIND)
    if len(kind_raw) != 1 or kind_raw[0] not in ContentKind._value2member_map_:
        raise MalformedMessage("bad content kind")
    fbid_raw = r.optional(T_FINAL_BLOCK_ID)
    if fbid_raw is not None and len(fbid_raw) != 6:
        raise MalformedMessage("FinalBlockID must be 6 bytes")
    signer = r.expect(T_SIGNER_KEY_ID)
    signature = r.expect(T_SIGNATURE)
    r.finish()
    return ContentObject(
        name=name,
        payload=payload,
        kind=ContentKind(kind_raw[0]),
        final_block_id=None if fbid_raw is None else int.from_bytes(fbid_raw, "big"),
        signer=signer,
        signature=signature,
    )


def _decode_interest_value(value: bytes) -> Interest:
    r = _Reader(value)
    name = _decode_name_value(r.expect(T_NAME))
    nonce = r.expect(T_NONCE)
    if len(nonce) != NONCE_LEN:
        raise MalformedMessage("nonce must be 8 bytes")
    embedded = r.optional(T_EMBEDDED_OBJECT)
    r.finish()
    obj = None
    if embedded is not None:
        inner = decode_message(embedded)
        if not isinstance(inner, ContentObject):
            raise MalformedMessage("embedded element is not a Content Object")
        obj = inner
    return Interest(name=name, nonce=nonce, embedded_object=obj)


def encode_message(m: Message) -> bytes:
    return m.wire


def decode_message(data: bytes) -> Message:
    r = _Reader(data)
    t, value = r.read()
    r.finish()
    if t == T_INTEREST:
        return _decode_interest_value(value)
    if t == T_CONTENT_OBJECT:
        return _decode_object_value(value)
    raise MalformedMessage(f"unknown top-level TLV type 0x{t:02x}")


def sign_object(o: ContentObject, key: crypto_suite.IdentityKeyPair) -> ContentObject:
    """Return ``o`` stamped with ``key``'s KeyId and a signature over its fields."""
    unsigned = replace(o, signer=key.key_id, signature=b"")
    return replace(unsigned, signature=crypto_suite.sign(key, unsigned.signed_portion))


def verify_object(o: ContentObject, public_key: crypto_suite.PublicKey) -> bool:
    if o.signer != public_key.key_id:
        return False
    return crypto_suite.verify(public_key, o.signed_portion, o.signature)
