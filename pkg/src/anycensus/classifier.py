"""Anycast-source classification: count the vantage points that received replies.

A prefix whose replies all land at one VP is unicast; replies at two or more
VPs make it an anycast candidate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Optional, TextIO

from .domain import MeasurementSpec, Prefix, ProbeReply, Protocol, ip


class Verdict(str, Enum):
    UNRESPONSIVE = "unresponsive"
    UNICAST = "unicast"
    CANDIDATE = "candidate"


def verdict_for(count: int) -> Verdict:
    if count == 0:
        return Verdict.UNRESPONSIVE
    return Verdict.UNICAST if count == 1 else Verdict.CANDIDATE


@dataclass(frozen=True)
class AnycastClassification:
    prefix: Prefix
    protocol: Protocol
    rx_vps: frozenset

    @property
    def rx_vp_count(self) -> int:
        return len(self.rx_vps)

    @property
    def verdict(self) -> Verdict:
        return verdict_for(self.rx_vp_count)

    def merge(self, other: "AnycastClassification") -> "AnycastClassification":
        """Associative merge of two partial classifications of the same prefix."""
        if other.prefix != self.prefix or other.protocol != self.protocol:
            raise ValueError("can only merge classifications of one (prefix, protocol)")
        return AnycastClassification(self.prefix, self.protocol, self.rx_vps | other.rx_vps)

    def to_dict(self) -> dict:
        return {
            "prefix": str(self.prefix),
            "protocol": self.protocol.value,
            "verdict": self.verdict.value,
            "rx_vp_count": self.rx_vp_count,
            "rx_vps": sorted(self.rx_vps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnycastClassification":
        return cls(Prefix.parse(d["prefix"]), Protocol(d["protocol"]), frozenset(d["rx_vps"]))


class _PrefixIndex:
    """Maps addresses to the hitlist prefix that contains them."""

    def __init__(self, prefixes: Iterable[Prefix]):
        self._by_len: Dict[tuple, set] = {}
        for p in prefixes:
            self._by_len.setdefault((p.ip_version, p.length), set()).add(int(p.base_address))
        self._lengths = sorted(self._by_len, key=lambda k: -k[1])

    def lookup(self, address) -> Optional[Prefix]:
        addr = ip(address)
        bits = 32 if addr.version == 4 else 128
        for version, length in self._lengths:
            if version != addr.version:
                continue
            base = int(addr) & (((1 << length) - 1) << (bits - length))
            if base in self._by_len[(version, length)]:
                return Prefix.of(addr, length)
        return None


def classify(replies: Iterable[ProbeReply], spec: Optional[MeasurementSpec] = None,
             prefixes: Optional[Iterable[Prefix]] = None) -> Dict[Prefix, AnycastClassification]:
    """Group replies by prefix and collect the receiving VPs.

    With ``prefixes`` (the hitlist), every hitlist prefix gets a verdict,
    unresponsive ones included, and replies outside the hitlist are ignored.
    With ``spec``, rows of other measurements are ignored.
    """
    wanted = list(prefixes) if prefixes is not None else None
    index = _PrefixIndex(wanted) if wanted is not None else None
    rx: Dict[Prefix, set] = {p: set() for p in wanted} if wanted is not None else {}
    protocol = spec.protocol if spec is not None else None
    for r in replies:
        if spec is not None and r.measurement_id != spec.measurement_id:
            continue
        if protocol is None:
            protocol = Protocol(r.protocol)
        prefix = index.lookup(r.target.address) if index is not None else r.target.prefix
        if prefix is None:
            continue
        rx.setdefault(prefix, set()).add(r.rx_worker)
    protocol = protocol or Protocol.ICMP
    return {p: AnycastClassification(p, protocol, frozenset(vps)) for p, vps in sorted(rx.items())}


def candidate_set(classifications: Iterable, prior_gcd_confirmed: Iterable[Prefix] = ()) -> list:
    """Candidates plus previously GCD-confirmed prefixes, sorted and unique.

    ``classifications`` may be a mapping or an iterable of classifications.
    """
    items = classifications.values() if isinstance(classifications, dict) else classifications
    out = {c.prefix for c in items if c.verdict is Verdict.CANDIDATE}
    out.update(prior_gcd_confirmed)
    return sorted(out)


def write_classifications(fh: TextIO, classifications: Dict[Prefix, AnycastClassification]) -> None:
    for prefix in sorted(classifications):
        fh.write(json.dumps(classifications[prefix].to_dict(), sort_keys=True) + "\n")


def read_classifications(fh: TextIO) -> Dict[Prefix, AnycastClassification]:
    out = {}
    for line in fh:
        if line.strip() and not line.startswith("#"):
            c = AnycastClassification.from_dict(json.loads(line))
            out[c.prefix] = c
    return out
