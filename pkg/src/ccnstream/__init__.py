"""Bidirectional byte streams over a simulated Content-Centric Network.

``ccn_core`` holds names, messages and the wire codec, ``crypto_suite`` the
signing/wrapping/sealing modes, ``fabric`` the forwarding simulator,
``stream_io`` segmented reliable streams, ``bistream`` session setup, and
``scenarios``/``cli`` the runnable reproductions.
"""

from .bistream import Endpoint, NamespacePolicy, RejectReason, Session, SessionState
from .ccn_core import ContentKind, ContentObject, Interest, Name
from .crypto_suite import KeyStore, generate_identity
from .fabric import DropPolicy, Simulator, Topology
from .stream_io import FlowConfig

__version__ = "0.1.0"

__all__ = [
    "ContentKind", "ContentObject", "DropPolicy", "Endpoint", "FlowConfig", "Interest",
    "KeyStore", "Name", "NamespacePolicy", "RejectReason", "Session", "SessionState",
    "Simulator", "Topology", "generate_identity",
]
