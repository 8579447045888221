"""Properties that can be checked from a trace alone.

Each checker returns a list of human-readable problems; an empty list
means the property holds.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from typing import Iterable

from .ccn_core import Name, is_segment, parse_segment
from .fabric import Direction, Kind, Topology, TraceRecord

SEND, RECV, DROP = Direction.SEND, Direction.RECV, Direction.DROP
INTEREST, OBJECT = Kind.INTEREST, Kind.OBJECT


def split_segment(uri: str) -> tuple[str, int] | None:
    """``(stream_uri, segment)`` if the name ends in a segment component."""
    name = Name.from_uri(uri)
    if not len(name) or not is_segment(name.components[-1]):
        return None
    return name[:-1].to_uri(), parse_segment(name.components[-1])


def _is_link_drop(r: TraceRecord, prev: TraceRecord | None) -> bool:
    if r.note:
        return r.note == "link"
    # Records read back from JSONL carry no reason; a link loss directly follows its SEND.
    return (prev is not None and prev.direction is SEND
            and (prev.node, prev.t, prev.kind, prev.name_uri, prev.size)
            == (r.node, r.t, r.kind, r.name_uri, r.size))


def flow_balance(trace: Iterable[TraceRecord], topology: Topology) -> list[str]:
    """Every RECV pairs with an earlier SEND on a neighbour; unpaired SENDs are link DROPs."""
    latency: dict[tuple[str, str], int] = {}
    for link in topology.links:
        latency.setdefault((link.a, link.b), link.latency)
        latency.setdefault((link.b, link.a), link.latency)
    in_flight: Counter = Counter()
    problems = []
    sends = recvs = link_drops = 0
    prev: TraceRecord | None = None
    for r in trace:
        key = (r.kind, r.name_uri, r.size)
        if r.direction is SEND:
            sends += 1
            in_flight[(r.node, r.t) + key] += 1
        elif r.direction is DROP and _is_link_drop(r, prev):
            link_drops += 1
            in_flight[(r.node, r.t) + key] -= 1
        elif r.direction is RECV:
            recvs += 1
            for (a, b), lat in latency.items():
                if b != r.node:
                    continue
                slot = (a, r.t - lat) + key
                if in_flight[slot] > 0:
                    in_flight[slot] -= 1
                    break
            else:
                problems.append(f"RECV without matching SEND: {r.to_json()}")
        prev = r
    if sends != recvs + link_drops:
        problems.append(f"{sends} SEND != {recvs} RECV + {link_drops} link DROP")
    return problems


def reverse_path(trace: Iterable[TraceRecord]) -> list[str]:
    """An object only arrives at a node that earlier sent an Interest of the same name."""
    asked: dict[str, set[str]] = defaultdict(set)
    problems = []
    for r in trace:
        if r.direction is SEND and r.kind is INTEREST:
            asked[r.node].add(r.name_uri)
        elif r.direction is RECV and r.kind is OBJECT and r.name_uri not in asked[r.node]:
            problems.append(f"object arrived off the reverse path: {r.to_json()}")
    return problems


def response_name_exactness(trace: Iterable[TraceRecord]) -> list[str]:
    """Every ACCEPT or REJECT answers an Interest of byte-identical name at the sending node."""
    seen: dict[str, set[str]] = defaultdict(set)
    problems = []
    for r in trace:
        if r.kind is INTEREST and r.direction in (SEND, RECV):
            seen[r.node].add(r.name_uri)
        elif (r.kind is OBJECT and r.direction is SEND and r.content_kind in ("ACCEPT", "REJECT")
              and r.name_uri not in seen[r.node]):
            problems.append(f"{r.content_kind} does not match any Open Interest: {r.name_uri}")
    return problems


def reader_in_flight(trace: Iterable[TraceRecord], node: str, stream_uri: str) -> list[int]:
    """Outstanding segment count for one reader after each of its Interest sends."""
    outstanding: set[int] = set()
    sizes = []
    for r in trace:
        if r.node != node:
            continue
        parts = split_segment(r.name_uri)
        if parts is None or parts[0] != stream_uri:
            continue
        seg = parts[1]
        if r.direction is SEND and r.kind is INTEREST:
            outstanding.add(seg)
            sizes.append(len(outstanding))
        elif r.direction is RECV and r.kind is OBJECT:
            outstanding.discard(seg)
    return sizes


def retransmissions(trace: Iterable[TraceRecord], node: str, stream_uri: str) -> int:
    counts: Counter = Counter()
    for r in trace:
        if r.node == node and r.direction is SEND and r.kind is INTEREST:
            parts = split_segment(r.name_uri)
            if parts is not None and parts[0] == stream_uri:
                counts[parts[1]] += 1
    return sum(c - 1 for c in counts.values())


def first_divergence(actual: list[str], expected: list[str]) -> tuple[int, str, str] | None:
    """1-based line number and the two differing lines, or None if identical."""
    for i, (a, e) in enumerate(zip(actual, expected), start=1):
        if a != e:
            return i, a, e
    if len(actual) != len(expected):
        i = min(len(actual), len(expected)) + 1
        a = actual[i - 1] if i <= len(actual) else "<end of trace>"
        e = expected[i - 1] if i <= len(expected) else "<end of trace>"
        return i, a, e
    return None
