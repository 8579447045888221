"""Signing, session-key wrapping and payload sealing in two interchangeable modes.

``null`` is a deterministic test double: keyed-hash "signatures" and a
SHAKE-256 keystream with an HMAC tag. It offers no security and exists so
that traces are reproducible. ``real`` uses Ed25519 signatures, X25519 +
HKDF + ChaCha20-Poly1305 key wrapping and ChaCha20-Poly1305 sealing.

Both modes produce sealed payloads exactly ``SEAL_OVERHEAD`` bytes longer
than the plaintext.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

MODES = ("null", "real")
KEY_ID_LEN = 16
SESSION_KEY_LEN = 32
SEAL_OVERHEAD = 16

_RAW = dict(encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw)


class CryptoError(Exception):
    pass


class WrongRecipient(CryptoError):
    pass


class CorruptWrap(CryptoError):
    pass


class AuthFailure(CryptoError):
    pass


class KeyIdCollision(CryptoError):
    pass


@dataclass(frozen=True)
class PublicKey:
    key_id: bytes
    material: bytes
    mode: str = "null"


@dataclass(frozen=True)
class IdentityKeyPair:
    public: PublicKey
    private: bytes = field(repr=False)

    @property
    def key_id(self) -> bytes:
        return self.public.key_id

    @property
    def mode(self) -> str:
        return self.public.mode


@dataclass(frozen=True)
class SessionKey:
    secret: bytes = field(repr=False)
    mode: str = "null"

    def __post_init__(self):
        if len(self.secret) != SESSION_KEY_LEN:
            raise ValueError("session key must be 32 bytes")


@dataclass(frozen=True)
class WrappedKey:
    recipient: bytes
    ciphertext: bytes


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown crypto mode {mode!r}; expected one of {MODES}")


def _key_id(material: bytes) -> bytes:
    return hashlib.sha256(b"key-id" + material).digest()[:KEY_ID_LEN]


def _xor(a: bytes, b: bytes) -> bytes:
    n = len(a)
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(n, "big")


def generate_identity(seed: bytes, mode: str = "null") -> IdentityKeyPair:
    """Derive an identity key pair deterministically from a 32-byte seed."""
    _check_mode(mode)
    if len(seed) != 32:
        raise ValueError("identity seed must be 32 bytes")
    if mode == "null":
        private = hashlib.sha256(b"null-private" + seed).digest()
        material = hashlib.sha256(b"null-public" + private).digest()
    else:
        private = seed
        ed, x = _real_private(seed)
        material = ed.public_key().public_bytes(**_RAW) + x.public_key().public_bytes(**_RAW)
    return IdentityKeyPair(PublicKey(_key_id(material), material, mode), private)


@lru_cache(maxsize=256)
def _real_private(seed: bytes) -> tuple[Ed25519PrivateKey, X25519PrivateKey]:
    ed = Ed25519PrivateKey.from_private_bytes(seed)
    x = X25519PrivateKey.from_private_bytes(hashlib.sha256(b"x25519" + seed).digest())
    return ed, x


def sign(key: IdentityKeyPair, data: bytes) -> bytes:
    if key.mode == "null":
        return hmac.new(key.public.material, data, hashlib.sha256).digest()
    ed, _ = _real_private(key.private)
    return ed.sign(data)


def verify(pk: PublicKey, data: bytes, signature: bytes) -> bool:
    if pk.mode == "null":
        expected = hmac.new(pk.material, data, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature)
    try:
        Ed25519PublicKey.from_public_bytes(pk.material[:32]).verify(signature, data)
    except (InvalidSignature, ValueError):
        return False
    return True


def new_session_key(rng, mode: str = "null") -> SessionKey:
    """Draw a session key. Null mode takes it from ``rng``; real mode uses the OS CSPRNG."""
    _check_mode(mode)
    drawn = rng.randbytes(SESSION_KEY_LEN)
    if mode == "null":
        return SessionKey(drawn, mode)
    # The draw above is discarded; it keeps the run's random stream, and so
    # every later name and nonce, identical across crypto modes.
    return SessionKey(ChaCha20Poly1305.generate_key(), mode)


def wrap_session_key(k: SessionKey, pk: PublicKey) -> WrappedKey:
    if k.mode != pk.mode:
        raise ValueError("session key and public key come from different crypto modes")
    if pk.mode == "null":
        pad = hashlib.shake_256(b"wrap" + pk.material).digest(SESSION_KEY_LEN)
        ct = _xor(k.secret, pad)
        tag = hmac.new(pk.material, b"wrap-tag" + ct, hashlib.sha256).digest()[:16]
        return WrappedKey(pk.key_id, ct + tag)
    eph = X25519PrivateKey.generate()
    eph_pub = eph.public_key().public_bytes(**_RAW)
    recipient_x = X25519PublicKey.from_public_bytes(pk.material[32:])
    kek = _wrap_kek(eph.exchange(recipient_x), eph_pub, pk.material[32:])
    ct = ChaCha20Poly1305(kek).encrypt(bytes(12), k.secret, pk.key_id)
    return WrappedKey(pk.key_id, eph_pub + ct)


def unwrap_session_key(w: WrappedKey, kp: IdentityKeyPair) -> SessionKey:
    if w.recipient != kp.key_id:
        raise WrongRecipient("wrapped key is addressed to a different identity")
    if kp.mode == "null":
        material = kp.public.material
        ct, tag = w.ciphertext[:SESSION_KEY_LEN], w.ciphertext[SESSION_KEY_LEN:]
        expected = hmac.new(material, b"wrap-tag" + ct, hashlib.sha256).digest()[:16]
        if len(w.ciphertext) != SESSION_KEY_LEN + 16 or not hmac.compare_digest(tag, expected):
            raise CorruptWrap("wrap tag mismatch")
        pad = hashlib.shake_256(b"wrap" + material).digest(SESSION_KEY_LEN)
        return SessionKey(_xor(ct, pad), "null")
    if len(w.ciphertext) != 32 + SESSION_KEY_LEN + 16:
        raise CorruptWrap("wrapped key has the wrong length")
    _, x = _real_private(kp.private)
    eph_pub = w.ciphertext[:32]
    kek = _wrap_kek(x.exchange(X25519PublicKey.from_public_bytes(eph_pub)), eph_pub,
                    kp.public.material[32:])
    try:
        secret = ChaCha20Poly1305(kek).decrypt(bytes(12), w.ciphertext[32:], kp.key_id)
    except InvalidTag as e:
        raise CorruptWrap("wrap authentication failed") from e
    return SessionKey(secret, "real")


def _wrap_kek(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(), length=32, salt=None,
        info=b"ccnstream key wrap" + eph_pub + recipient_pub,
    ).derive(shared)


def seal_context(stream_wire: bytes, segment: int) -> bytes:
    """Bind a sealed payload to one (stream, segment) slot."""
    return stream_wire + segment.to_bytes(6, "big")


def seal_payload(k: SessionKey, context: bytes, plaintext: bytes) -> bytes:
    if k.mode == "null":
        ks = hashlib.shake_256(b"seal" + k.secret + context).digest(len(plaintext))
        ct = _xor(plaintext, ks) if plaintext else b""
        return ct + hmac.new(k.secret, context + ct, hashlib.sha256).digest()[:SEAL_OVERHEAD]
    nonce = hashlib.sha256(context).digest()[:12]
    return ChaCha20Poly1305(k.secret).encrypt(nonce, plaintext, context)


def open_payload(k: SessionKey, context: bytes, sealed: bytes) -> bytes:
    if len(sealed) < SEAL_OVERHEAD:
        raise AuthFailure("sealed payload shorter than its tag")
    if k.mode == "null":
        ct, tag = sealed[:-SEAL_OVERHEAD], sealed[-SEAL_OVERHEAD:]
        expected = hmac.new(k.secret, context + ct, hashlib.sha256).digest()[:SEAL_OVERHEAD]
        if not hmac.compare_digest(tag, expected):
            raise AuthFailure("seal tag mismatch")
        ks = hashlib.shake_256(b"seal" + k.secret + context).digest(len(ct))
        return _xor(ct, ks) if ct else b""
    nonce = hashlib.sha256(context).digest()[:12]
    try:
        return ChaCha20Poly1305(k.secret).decrypt(nonce, sealed, context)
    except InvalidTag as e:
        raise AuthFailure("payload authentication failed") from e


class KeyStore:
    """In-memory map from KeyId to PublicKey."""

    def __init__(self, keys=()):
        self._keys: dict[bytes, PublicKey] = {}
        for k in keys:
            self.add(k)

    def add(self, key: PublicKey | IdentityKeyPair) -> None:
        pk = key.public if isinstance(key, IdentityKeyPair) else key
        existing = self._keys.get(pk.key_id)
        if existing is not None and existing != pk:
            raise KeyIdCollision(pk.key_id.hex())
        self._keys[pk.key_id] = pk

    def get(self, key_id: bytes) -> PublicKey | None:
        return self._keys.get(key_id)

    def resolve(self, key_id: bytes) -> PublicKey:
        from .ccn_core import UnknownSigner

        try:
            return self._keys[key_id]
        except KeyError:
            raise UnknownSigner(key_id.hex()) from None

    def __contains__(self, key_id: bytes) -> bool:
        return key_id in self._keys

    def __len__(self) -> int:
        return len(self._keys)
