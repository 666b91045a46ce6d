"""Vocabulary types shared by every other module.

All types are immutable values. Timestamps are integer microseconds since the
Unix epoch; addresses are :mod:`ipaddress` objects.
"""

from __future__ import annotations

import functools
import ipaddress
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional, Sequence, Union

from .errors import ConfigError

IPAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]
IPNetwork = Union[ipaddress.IPv4Network, ipaddress.IPv6Network]

DEFAULT_PREFIX_LEN = {4: 24, 6: 48}
PREFIX_LEN_RANGE = {4: (8, 32), 6: (16, 64)}
WORKER_ID_MAX = 0xFFFF
DEFAULT_TCP_DST_PORT = 62222
DEFAULT_OFFSET_MS = 1000


class Protocol(str, Enum):
    ICMP = "icmp"
    TCP = "tcp"
    DNS_A = "dns_a"
    DNS_CHAOS = "dns_chaos"

    @property
    def family(self) -> str:
        """Protocol family used for census column names (icmp, tcp, dns)."""
        return "dns" if self in (Protocol.DNS_A, Protocol.DNS_CHAOS) else self.value


class SourceMode(str, Enum):
    ANYCAST = "anycast"
    UNICAST = "unicast"


def ip(value: Any) -> IPAddress:
    if isinstance(value, (ipaddress.IPv4Address, ipaddress.IPv6Address)):
        return value
    if isinstance(value, str):
        return _parse_ip(value)
    return ipaddress.ip_address(value)


@functools.lru_cache(maxsize=1 << 16)
def _parse_ip(text: str) -> IPAddress:
    return ipaddress.ip_address(text)


@functools.lru_cache(maxsize=1 << 16)
def _network(text: str) -> IPNetwork:
    return ipaddress.ip_network(text, strict=False)


@dataclass(frozen=True)
class Prefix:
    """A probing prefix; always stored normalized (host bits zero)."""

    network: IPNetwork

    def __post_init__(self):
        lo, hi = PREFIX_LEN_RANGE[self.network.version]
        if not lo <= self.network.prefixlen <= hi:
            raise ConfigError(
                f"prefix length /{self.network.prefixlen} outside [{lo},{hi}] for IPv{self.network.version}"
            )

    @classmethod
    def parse(cls, text: str) -> "Prefix":
        return cls(_network(text))

    @classmethod
    def of(cls, address: Any, length: Optional[int] = None) -> "Prefix":
        addr = ip(address)
        if length is None:
            length = DEFAULT_PREFIX_LEN[addr.version]
        return cls(_network(f"{addr}/{length}"))

    @property
    def ip_version(self) -> int:
        return self.network.version

    @property
    def base_address(self) -> IPAddress:
        return self.network.network_address

    @property
    def length(self) -> int:
        return self.network.prefixlen

    def normalize(self) -> "Prefix":
        return Prefix(ipaddress.ip_network(f"{self.base_address}/{self.length}", strict=False))

    def contains(self, address: Any) -> bool:
        addr = ip(address)
        return addr.version == self.ip_version and addr in self.network

    def sort_key(self):
        return (self.ip_version, int(self.base_address), self.length)

    def __lt__(self, other: "Prefix") -> bool:
        return self.sort_key() < other.sort_key()

    def __str__(self) -> str:
        return str(self.network)


def prefix_of(address: Any, length: Optional[int] = None) -> Prefix:
    return Prefix.of(address, length)


@dataclass(frozen=True)
class TargetAddress:
    address: IPAddress
    prefix: Prefix

    def __post_init__(self):
        if not self.prefix.contains(self.address):
            raise ConfigError(f"{self.address} is not inside {self.prefix}")

    @classmethod
    def of(cls, address: Any, length: Optional[int] = None) -> "TargetAddress":
        addr = ip(address)
        return cls(addr, Prefix.of(addr, length))

    @property
    def ip_version(self) -> int:
        return self.address.version

    def __str__(self) -> str:
        return str(self.address)


def check_worker_id(worker_id: int) -> int:
    if not isinstance(worker_id, int) or not 0 < worker_id <= WORKER_ID_MAX:
        raise ConfigError(f"worker id must be in 1..{WORKER_ID_MAX}, got {worker_id!r}")
    return worker_id


@dataclass(frozen=True)
class VantagePoint:
    worker_id: int
    name: str
    lat: float
    lon: float
    unicast_address: IPAddress
    anycast_address: IPAddress
    unicast_address6: Optional[IPAddress] = None
    anycast_address6: Optional[IPAddress] = None

    def __post_init__(self):
        check_worker_id(self.worker_id)
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise ConfigError(f"VP {self.name}: coordinates out of range")
        for name in ("unicast_address", "anycast_address", "unicast_address6", "anycast_address6"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, ip(value))

    def source_address(self, mode: SourceMode, ip_version: int = 4) -> IPAddress:
        if ip_version == 4:
            addr = self.anycast_address if mode is SourceMode.ANYCAST else self.unicast_address
        else:
            addr = self.anycast_address6 if mode is SourceMode.ANYCAST else self.unicast_address6
        if addr is None or addr.version != ip_version:
            raise ConfigError(f"VP {self.name} has no IPv{ip_version} {mode.value} address")
        return addr

    def to_dict(self) -> dict:
        out = {
            "worker_id": self.worker_id,
            "name": self.name,
            "lat": self.lat,
            "lon": self.lon,
            "unicast_address": str(self.unicast_address),
            "anycast_address": str(self.anycast_address),
        }
        if self.unicast_address6 is not None:
            out["unicast_address6"] = str(self.unicast_address6)
        if self.anycast_address6 is not None:
            out["anycast_address6"] = str(self.anycast_address6)
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "VantagePoint":
        return cls(
            worker_id=int(d["worker_id"]),
            name=str(d["name"]),
            lat=float(d["lat"]),
            lon=float(d["lon"]),
            unicast_address=ip(d["unicast_address"]),
            anycast_address=ip(d["anycast_address"]),
            unicast_address6=ip(d["unicast_address6"]) if d.get("unicast_address6") else None,
            anycast_address6=ip(d["anycast_address6"]) if d.get("anycast_address6") else None,
        )


@dataclass(frozen=True)
class MeasurementSpec:
    measurement_id: int
    protocol: Protocol
    ip_version: int
    source_mode: SourceMode
    rate_pps: float
    workers: tuple
    worker_offset_ms: int = DEFAULT_OFFSET_MS
    dns_probe_domain: str = ""
    tcp_dst_port: int = DEFAULT_TCP_DST_PORT

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "source_mode", SourceMode(self.source_mode))
        object.__setattr__(self, "workers", tuple(int(w) for w in self.workers))
        if not 0 <= self.measurement_id <= 0xFFFFFFFF:
            raise ConfigError("measurement_id must fit 32 bits")
        if self.ip_version not in (4, 6):
            raise ConfigError(f"ip_version must be 4 or 6, got {self.ip_version}")
        if not self.rate_pps > 0:
            raise ConfigError(f"rate must be > 0 pps, got {self.rate_pps}")
        if self.worker_offset_ms < 0:
            raise ConfigError("worker offset must be >= 0 ms")
        if not self.workers:
            raise ConfigError("measurement needs at least one worker")
        for w in self.workers:
            check_worker_id(w)
        if len(set(self.workers)) != len(self.workers):
            raise ConfigError("duplicate worker ids in measurement")
        if self.protocol is Protocol.DNS_A and not self.dns_probe_domain:
            raise ConfigError("DNS_A measurements require a dns_probe_domain")
        if not 0 < self.tcp_dst_port <= 0xFFFF:
            raise ConfigError("tcp_dst_port must be a 16-bit port")

    @property
    def offset_us(self) -> int:
        return int(self.worker_offset_ms) * 1000

    def to_dict(self) -> dict:
        return {
            "measurement_id": self.measurement_id,
            "protocol": self.protocol.value,
            "ip_version": self.ip_version,
            "source_mode": self.source_mode.value,
            "rate_pps": self.rate_pps,
            "workers": list(self.workers),
            "worker_offset_ms": self.worker_offset_ms,
            "dns_probe_domain": self.dns_probe_domain,
            "tcp_dst_port": self.tcp_dst_port,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MeasurementSpec":
        return cls(**{k: d[k] for k in d if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ProbeReply:
    measurement_id: int
    target: TargetAddress
    tx_worker: int
    rx_worker: int
    tx_time_us: int
    rx_time_us: int
    protocol: Protocol
    chaos_value: Optional[str] = field(default=None, compare=True)

    @property
    def cross_site(self) -> bool:
        return self.tx_worker != self.rx_worker

    def dedup_key(self):
        return (self.target.address, self.tx_worker, self.rx_worker, self.tx_time_us)

    def to_dict(self) -> dict:
        out = {
            "measurement_id": self.measurement_id,
            "target": str(self.target.address),
            "prefix": str(self.target.prefix),
            "tx_worker": self.tx_worker,
            "rx_worker": self.rx_worker,
            "tx_time_us": self.tx_time_us,
            "rx_time_us": self.rx_time_us,
            "protocol": Protocol(self.protocol).value,
            "cross_site": self.cross_site,
        }
        if self.chaos_value is not None:
            out["chaos_value"] = self.chaos_value
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ProbeReply":
        addr = ip(d["target"])
        prefix = Prefix.parse(d["prefix"]) if "prefix" in d else Prefix.of(addr)
        return cls(
            measurement_id=int(d["measurement_id"]),
            target=TargetAddress(addr, prefix),
            tx_worker=int(d["tx_worker"]),
            rx_worker=int(d["rx_worker"]),
            tx_time_us=int(d["tx_time_us"]),
            rx_time_us=int(d["rx_time_us"]),
            protocol=Protocol(d["protocol"]),
            chaos_value=d.get("chaos_value"),
        )


@dataclass(frozen=True)
class RttSample:
    vp: VantagePoint
    rtt_us: int

    def __post_init__(self):
        if self.rtt_us <= 0:
            raise ConfigError("RTT samples must be positive")


def rtt_from_reply(
    reply: ProbeReply,
    roster: Mapping[int, VantagePoint],
    stats: Optional[Counter] = None,
) -> Optional[RttSample]:
    """Same-site RTT of a reply, or None.

    Cross-site rows are skipped because the two clocks are not comparable.
    Non-positive RTTs are clock anomalies; they are counted under
    ``stats["rtt_anomalies"]`` and dropped.
    """
    if reply.cross_site:
        return None
    rtt = reply.rx_time_us - reply.tx_time_us
    if rtt <= 0:
        if stats is not None:
            stats["rtt_anomalies"] += 1
        return None
    vp = roster.get(reply.rx_worker)
    if vp is None:
        if stats is not None:
            stats["unknown_vp"] += 1
        return None
    return RttSample(vp, rtt)


def load_hitlist(lines: Sequence[str], length: Optional[int] = None) -> list:
    """Parse hitlist lines into TargetAddress values.

    Each non-comment line holds an address, optionally preceded by its
    prefix (``prefix,address`` or whitespace separated).
    """
    targets = []
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) == 1:
            targets.append(TargetAddress.of(parts[0], length))
        else:
            prefix = Prefix.parse(parts[0])
            targets.append(TargetAddress(ip(parts[1]), prefix))
    return targets
