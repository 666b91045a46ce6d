"""Deterministic simulated Internet used as the worker transport in tests.

Model
-----
* A probe from VP ``v`` reaches the target site nearest to ``v``.
* With an anycast source address, the reply goes to the VP at the head of
  that site's catchment order: VPs sorted by great-circle distance scaled by
  seeded noise. Route flaps (a Poisson process per site) swap the first two
  entries while an odd number of flaps has occurred. ECMP targets hash the
  reply flow's 5-tuple to pick among the first ``ecmp_width`` entries.
* With a unicast source address the reply returns to the sender.
* ``rx_time = at + ceil((d(v, site) + d(site, rx_vp)) / c_fibre) + jitter``,
  so every RTT is at least the speed-of-light bound.

Everything random is derived by hashing the world seed with the event's
identity, so results do not depend on the order in which events are run.
"""

from __future__ import annotations

import bisect
import hashlib
import heapq
import ipaddress
import json
import math
import random
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence

import yaml

from .classifier import Verdict, verdict_for
from .domain import (
    IPAddress, MeasurementSpec, Prefix, ProbeReply, Protocol, SourceMode, TargetAddress,
    VantagePoint, ip,
)
from .errors import ConfigError, FrameError
from .gcd import haversine_km
from .orchestrator import MeasurementRun, Orchestrator, RunState
from .probecodec import (
    DNS_HEADER, ICMP_ECHO_REPLY, ICMP_ECHO_REQUEST, ICMP_HEADER, QTYPE_A, QTYPE_AAAA, QTYPE_TXT,
    TCP_ACK, TCP_HEADER, TCP_RST, TCP_SYN, UDP_HEADER, EncodedProbe, flow_key, icmp_message,
    tcp_segment, udp_datagram,
)
from .wire import FrameDecoder, FramedLink
from .worker import Worker

SIM_EPOCH_US = 1_700_000_000_000_000
FIBER_KM_PER_US = 0.2
ALL_PROTOCOLS = frozenset(Protocol)


# -- event loop --------------------------------------------------------------

class _Timer:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class EventLoop:
    """Virtual-time scheduler. Events at equal times run in insertion order."""

    def __init__(self, start_us: int = SIM_EPOCH_US):
        self._now = start_us
        self._heap: list = []
        self._counter = 0
        self.events_run = 0

    def now_us(self) -> int:
        return self._now

    def call_at(self, t_us: int, fn: Callable, *args) -> _Timer:
        timer = _Timer()
        self._counter += 1
        heapq.heappush(self._heap, (max(int(t_us), self._now), self._counter, timer, fn, args))
        return timer

    def call_later(self, delay_us: int, fn: Callable, *args) -> _Timer:
        return self.call_at(self._now + delay_us, fn, *args)

    def step(self) -> bool:
        while self._heap:
            t, _, timer, fn, args = heapq.heappop(self._heap)
            if timer.cancelled:
                continue
            self._now = t
            self.events_run += 1
            fn(*args)
            return True
        return False

    def run_until(self, predicate: Callable[[], bool], limit_us: Optional[int] = None) -> None:
        while not predicate():
            if limit_us is not None and self._heap and self._heap[0][0] > limit_us:
                self._now = limit_us
                return
            if not self.step():
                return

    def run_for(self, duration_us: int) -> None:
        end = self._now + duration_us
        self.run_until(lambda: False, limit_us=end)
        self._now = max(self._now, end)


# -- world model -------------------------------------------------------------

class TargetKind(str, Enum):
    UNICAST = "unicast"
    ANYCAST = "anycast"
    PARTIAL = "partial"
    UNRESPONSIVE = "unresponsive"


@dataclass(frozen=True)
class Site:
    name: str
    lat: float
    lon: float

    @property
    def location(self) -> tuple:
        return (self.lat, self.lon)


@dataclass(frozen=True)
class SimTarget:
    prefix: Prefix
    kind: TargetKind
    address: IPAddress
    sites: tuple = ()
    unicast_site: Optional[Site] = None
    anycast_addresses: tuple = ()
    unicast_addresses: tuple = ()
    services: frozenset = ALL_PROTOCOLS
    ecmp: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", TargetKind(self.kind))
        object.__setattr__(self, "address", ip(self.address))
        if self.kind is TargetKind.ANYCAST:
            if len(self.sites) < 2:
                raise ConfigError(f"{self.prefix}: anycast targets need >= 2 sites")
            if len({s.location for s in self.sites}) != len(self.sites):
                raise ConfigError(f"{self.prefix}: anycast sites must be at distinct locations")
        if self.kind is TargetKind.UNICAST and len(self.sites) != 1:
            raise ConfigError(f"{self.prefix}: unicast targets have exactly one site")
        if self.kind is TargetKind.PARTIAL and (self.unicast_site is None or len(self.sites) < 2):
            raise ConfigError(f"{self.prefix}: partial targets need anycast sites and a unicast site")

    @property
    def hitlist_entry(self) -> TargetAddress:
        return TargetAddress(self.address, self.prefix)

    def to_dict(self) -> dict:
        out: Dict[str, Any] = {"prefix": str(self.prefix), "kind": self.kind.value, "address": str(self.address)}
        if self.sites:
            out["sites"] = [[s.name, s.lat, s.lon] for s in self.sites]
        if self.unicast_site is not None:
            s = self.unicast_site
            out["unicast_site"] = [s.name, s.lat, s.lon]
        if self.anycast_addresses:
            out["anycast_addresses"] = [str(a) for a in self.anycast_addresses]
            out["unicast_addresses"] = [str(a) for a in self.unicast_addresses]
        if self.services != ALL_PROTOCOLS:
            out["services"] = sorted(p.value for p in self.services)
        if self.ecmp:
            out["ecmp"] = True
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SimTarget":
        us = d.get("unicast_site")
        return cls(
            prefix=Prefix.parse(d["prefix"]),
            kind=TargetKind(d["kind"]),
            address=ip(d["address"]),
            sites=tuple(Site(str(n), float(la), float(lo)) for n, la, lo in d.get("sites", [])),
            unicast_site=Site(str(us[0]), float(us[1]), float(us[2])) if us else None,
            anycast_addresses=tuple(ip(a) for a in d.get("anycast_addresses", [])),
            unicast_addresses=tuple(ip(a) for a in d.get("unicast_addresses", [])),
            services=frozenset(Protocol(p) for p in d["services"]) if "services" in d else ALL_PROTOCOLS,
            ecmp=bool(d.get("ecmp", False)),
        )


class Delivery(NamedTuple):
    payload: bytes
    rx_worker: int
    rx_time_us: int
    source: IPAddress
    site: str


@dataclass(frozen=True)
class GroundTruth:
    prefix: Prefix
    kind: TargetKind
    site_count: int
    sites: tuple
    expected_verdict: Verdict
    expected_rx_vps: frozenset
    single_catchment: bool
    ecmp: bool
    anycast_addresses: tuple = ()
    unicast_addresses: tuple = ()

    @property
    def is_anycast(self) -> bool:
        return self.kind is TargetKind.ANYCAST

    def to_dict(self) -> dict:
        return {
            "prefix": str(self.prefix),
            "kind": self.kind.value,
            "site_count": self.site_count,
            "sites": [[s.name, s.lat, s.lon] for s in self.sites],
            "expected_verdict": self.expected_verdict.value,
            "expected_rx_vps": sorted(self.expected_rx_vps),
            "single_catchment": self.single_catchment,
            "ecmp": self.ecmp,
            "anycast_addresses": [str(a) for a in self.anycast_addresses],
            "unicast_addresses": [str(a) for a in self.unicast_addresses],
        }


def _hash_int(*parts) -> int:
    return int.from_bytes(hashlib.blake2b(repr(parts).encode(), digest_size=8).digest(), "big")


def _hash_unit(*parts) -> float:
    return _hash_int(*parts) / 2.0 ** 64


@dataclass
class SimWorld:
    seed: int
    vps: tuple
    targets: tuple
    flap_rate: float = 0.0
    ecmp_fraction: float = 0.0
    jitter_ms: float = 0.0
    catchment_noise: float = 0.2
    ecmp_width: int = 2
    dns_delay_ms: float = 0.0
    epoch_us: int = SIM_EPOCH_US
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.vps = tuple(self.vps)
        self.targets = tuple(self.targets)
        self.vp_by_id = {vp.worker_id: vp for vp in self.vps}
        if len(self.vp_by_id) != len(self.vps):
            raise ConfigError("duplicate VP worker ids in world")
        self._index: Dict[IPAddress, tuple] = {}
        self._ecmp: Dict[str, bool] = {}
        for t in self.targets:
            if t.kind is TargetKind.PARTIAL:
                for a in t.anycast_addresses:
                    self._index[ip(a)] = (t, "anycast")
                for a in t.unicast_addresses:
                    self._index[ip(a)] = (t, "unicast")
            else:
                self._index[t.address] = (t, "main")
            self._ecmp[str(t.prefix)] = t.ecmp or (
                t.kind is TargetKind.UNICAST and _hash_unit(self.seed, "ecmp", str(t.prefix)) < self.ecmp_fraction)
        self._prefs: dict = {}
        self._flaps: dict = {}

    # routing helpers

    def is_ecmp(self, target: SimTarget) -> bool:
        return self._ecmp[str(target.prefix)]

    @staticmethod
    def _sites_for(target: SimTarget, role: str) -> tuple:
        if role == "unicast":
            return (target.unicast_site,)
        return target.sites

    def serving_site(self, sites: Sequence[Site], vp: VantagePoint) -> int:
        return min(range(len(sites)), key=lambda i: (haversine_km((vp.lat, vp.lon), sites[i].location), i))

    def preference(self, target: SimTarget, role: str, site_index: int) -> tuple:
        """Catchment order of a site: VPs ranked by noisy distance."""
        key = (str(target.prefix), role, site_index)
        order = self._prefs.get(key)
        if order is None:
            site = self._sites_for(target, role)[site_index]

            def rank(vp):
                noise = _hash_unit(self.seed, "pref", key, vp.worker_id) * self.catchment_noise
                return (haversine_km(site.location, (vp.lat, vp.lon)) * (1 + noise), vp.worker_id)

            order = tuple(sorted(self.vps, key=rank))
            self._prefs[key] = order
        return order

    def flaps_before(self, key: tuple, t_us: int) -> int:
        if self.flap_rate <= 0:
            return 0
        state = self._flaps.get(key)
        if state is None:
            state = (random.Random(_hash_int(self.seed, "flap", key)), [])
            self._flaps[key] = state
        rng, times = state
        last = times[-1] if times else self.epoch_us
        while last <= t_us:
            last += max(1, int(rng.expovariate(self.flap_rate) * 1e6))
            times.append(last)
        return bisect.bisect_right(times, t_us)

    def catchment_vp(self, target: SimTarget, role: str, site_index: int, t_us: int,
                     flow: Optional[tuple] = None) -> VantagePoint:
        order = self.preference(target, role, site_index)
        if len(order) > 1 and self.flaps_before((str(target.prefix), role, site_index), t_us) % 2:
            order = (order[1], order[0]) + order[2:]
        if flow is not None and self.is_ecmp(target) and len(order) > 1:
            width = min(self.ecmp_width, len(order))
            return order[_hash_int(self.seed, "ecmp", flow) % width]
        return order[0]

    # delivery

    def lookup(self, address) -> Optional[tuple]:
        return self._index.get(ip(address))

    def deliver(self, probe: EncodedProbe, sent_from: int, at: int,
                source_mode: SourceMode = SourceMode.ANYCAST,
                source_address: Optional[IPAddress] = None) -> Optional[Delivery]:
        vp = self.vp_by_id[sent_from]
        found = self.lookup(probe.target.address)
        if found is None:
            return None
        target, role = found
        if target.kind is TargetKind.UNRESPONSIVE or probe.protocol not in target.services:
            return None
        if source_address is None:
            source_address = vp.source_address(source_mode, probe.target.ip_version)
        sites = self._sites_for(target, role)
        idx = self.serving_site(sites, vp)
        site = sites[idx]
        d_fwd = haversine_km((vp.lat, vp.lon), site.location)
        t_site = at + math.ceil(d_fwd / FIBER_KM_PER_US)
        if source_mode is SourceMode.UNICAST:
            rx_vp = vp
        else:
            flow = flow_key(probe.protocol, probe.wire_bytes, source_address, probe.target.address)
            rx_vp = self.catchment_vp(target, role, idx, t_site, flow)
        d_back = haversine_km(site.location, (rx_vp.lat, rx_vp.lon))
        delay = math.ceil((d_fwd + d_back) / FIBER_KM_PER_US)
        if self.jitter_ms > 0:
            delay += _hash_int(self.seed, "jitter", str(probe.target.address), sent_from, at,
                               probe.protocol.value) % (int(self.jitter_ms * 1000) + 1)
        if probe.protocol in (Protocol.DNS_A, Protocol.DNS_CHAOS):
            delay += int(self.dns_delay_ms * 1000)
        payload = respond(probe.protocol, probe.wire_bytes, probe.target.address, source_address, site.name)
        if payload is None:
            return None
        return Delivery(payload, rx_vp.worker_id, at + max(1, delay), probe.target.address, site.name)

    # ground truth

    def ground_truth(self, workers: Optional[Iterable[int]] = None) -> Dict[Prefix, GroundTruth]:
        """Oracle labels, including the classifier verdict expected under stable routing."""
        senders = [self.vp_by_id[w] for w in workers] if workers is not None else list(self.vps)
        out = {}
        for t in self.targets:
            if t.kind is TargetKind.UNRESPONSIVE:
                rx = frozenset()
            else:
                role = "anycast" if t.kind is TargetKind.PARTIAL else "main"
                sites = self._sites_for(t, role)
                reached = {self.serving_site(sites, vp) for vp in senders}
                rx = frozenset(self.preference(t, role, i)[0].worker_id for i in reached)
            sites = t.sites
            count = len(sites) if t.kind in (TargetKind.ANYCAST, TargetKind.PARTIAL) else (
                1 if t.kind is TargetKind.UNICAST else 0)
            out[t.prefix] = GroundTruth(
                prefix=t.prefix, kind=t.kind, site_count=count, sites=tuple(sites),
                expected_verdict=verdict_for(len(rx)), expected_rx_vps=rx,
                single_catchment=t.kind is TargetKind.ANYCAST and len(rx) == 1,
                ecmp=self.is_ecmp(t),
                anycast_addresses=t.anycast_addresses, unicast_addresses=t.unicast_addresses,
            )
        return out

    def hitlist(self, protocol: Optional[Protocol] = None) -> List[TargetAddress]:
        """One representative address per prefix (every prefix, responsive or not)."""
        return [t.hitlist_entry for t in self.targets]

    # persistence

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "flap_rate": self.flap_rate,
            "ecmp_fraction": self.ecmp_fraction,
            "jitter_ms": self.jitter_ms,
            "catchment_noise": self.catchment_noise,
            "ecmp_width": self.ecmp_width,
            "dns_delay_ms": self.dns_delay_ms,
            "epoch_us": self.epoch_us,
            "vps": [vp.to_dict() for vp in self.vps],
            "targets": [t.to_dict() for t in self.targets],
        }

    @classmethod
    def from_dict(cls, d: dict, seed: Optional[int] = None) -> "SimWorld":
        """Build a world from a config mapping.

        Either lists ``targets`` explicitly or has a ``generate`` section with
        counts passed to :func:`generate_world`.
        """
        seed = int(d.get("seed", 0) if seed is None else seed)
        params = {k: d[k] for k in ("flap_rate", "ecmp_fraction", "jitter_ms", "catchment_noise",
                                    "ecmp_width", "dns_delay_ms", "epoch_us") if k in d}
        vps = [VantagePoint.from_dict(v) for v in d["vps"]] if "vps" in d else None
        if "generate" in d:
            return generate_world(seed, vps=vps, **dict(d["generate"]), **params)
        return cls(seed, tuple(vps or default_vps()), tuple(SimTarget.from_dict(t) for t in d.get("targets", [])),
                   **params)

    @classmethod
    def load(cls, path, seed: Optional[int] = None) -> "SimWorld":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh), seed)


# -- responders --------------------------------------------------------------

def respond(protocol: Protocol, wire: bytes, target: IPAddress, dest: IPAddress, site_name: str) -> Optional[bytes]:
    """What a well-behaved target sends back for ``wire`` (None: silently dropped)."""
    try:
        if protocol is Protocol.ICMP:
            return _icmp_reply(wire, target, dest)
        if protocol is Protocol.TCP:
            return _tcp_reset(wire, target, dest)
        return _dns_response(wire, target, dest, site_name)
    except struct.error:
        return None


def _icmp_reply(wire: bytes, target: IPAddress, dest: IPAddress) -> Optional[bytes]:
    icmp_type, _code, _csum, ident, seq = ICMP_HEADER.unpack_from(wire)
    v = target.version
    if icmp_type != ICMP_ECHO_REQUEST[v]:
        return None
    return icmp_message(v, ICMP_ECHO_REPLY[v], ident, seq, wire[ICMP_HEADER.size:], target, dest)


def _tcp_reset(wire: bytes, target: IPAddress, dest: IPAddress) -> Optional[bytes]:
    sport, dport, _seq, ack, _off, flags, _w, _c, _u = TCP_HEADER.unpack_from(wire)
    if flags & (TCP_SYN | TCP_ACK) != (TCP_SYN | TCP_ACK) or flags & TCP_RST:
        return None
    # RFC 9293: a reset for a segment with ACK takes its sequence number from that ACK
    return tcp_segment(dport, sport, ack, 0, TCP_RST, target, dest, window=0)


_A_RDATA = ipaddress.IPv4Address("192.0.2.53").packed
_AAAA_RDATA = ipaddress.IPv6Address("2001:db8::53").packed


def _dns_response(wire: bytes, target: IPAddress, dest: IPAddress, site_name: str) -> Optional[bytes]:
    sport, dport, _len, _csum = UDP_HEADER.unpack_from(wire)
    msg = wire[UDP_HEADER.size:]
    txid, flags, qdcount, _an, _ns, _ar = DNS_HEADER.unpack_from(msg)
    if flags & 0x8000 or qdcount != 1:
        return None
    end = DNS_HEADER.size
    while msg[end] != 0:
        end += msg[end] + 1
    end += 5
    question = msg[DNS_HEADER.size:end]
    qtype, qclass = struct.unpack_from("!HH", msg, end - 4)
    if qtype == QTYPE_TXT:
        text = site_name.encode()[:255]
        rdata = bytes([len(text)]) + text
        rflags = 0x8400
    elif qtype == QTYPE_A:
        rdata, rflags = _A_RDATA, 0x8180
    elif qtype == QTYPE_AAAA:
        rdata, rflags = _AAAA_RDATA, 0x8180
    else:
        return None
    answer = b"\xc0\x0c" + struct.pack("!HHIH", qtype, qclass, 0, len(rdata)) + rdata
    body = DNS_HEADER.pack(txid, rflags | (flags & 0x0100), 1, 1, 0, 0) + question + answer
    return udp_datagram(dport, sport, body, target, dest)


# -- fabric: transports and control links --------------------------------------

class SimTransport:
    """:class:`~anycensus.worker.ProbeTransport` backed by a :class:`SimNetwork`."""

    def __init__(self, network: "SimNetwork", worker_id: int):
        self.network = network
        self.worker_id = worker_id
        self.up = True
        self.receiver = None

    def set_receiver(self, fn) -> None:
        self.receiver = fn

    def send(self, probe: EncodedProbe, source: IPAddress) -> None:
        if not self.up:
            raise OSError("transport is down")
        self.network.send(self.worker_id, probe, source)

    def close(self) -> None:
        self.up = False


class SimNetwork:
    """Connects worker transports to the world on the shared event loop."""

    def __init__(self, world: SimWorld, loop: EventLoop, record_trace: bool = True):
        self.world = world
        self.loop = loop
        self.transports: Dict[int, SimTransport] = {}
        self.trace: Optional[list] = [] if record_trace else None
        self.emitted: Dict[int, int] = defaultdict(int)
        self.lost_replies = 0

    def attach(self, worker_id: int) -> SimTransport:
        old = self.transports.get(worker_id)
        if old is not None:
            old.up = False
        t = SimTransport(self, worker_id)
        self.transports[worker_id] = t
        return t

    def send(self, worker_id: int, probe: EncodedProbe, source: IPAddress) -> None:
        vp = self.world.vp_by_id[worker_id]
        anycast = {vp.anycast_address, vp.anycast_address6}
        mode = SourceMode.ANYCAST if ip(source) in anycast else SourceMode.UNICAST
        now = self.loop.now_us()
        self.emitted[worker_id] += 1
        result = self.world.deliver(probe, worker_id, now, mode, ip(source))
        if self.trace is not None:
            self.trace.append(("tx", now, worker_id, probe.protocol.value, str(probe.target.address),
                               hashlib.sha1(probe.wire_bytes).hexdigest()[:12]))
        if result is not None:
            self.loop.call_at(result.rx_time_us, self._arrive, result)

    def inject(self, worker_id: int, payload: bytes, source, at_us: int) -> None:
        """Background traffic arriving at a worker."""
        self.loop.call_at(at_us, self._arrive, Delivery(payload, worker_id, at_us, ip(source), "noise"))

    def _arrive(self, d: Delivery) -> None:
        t = self.transports.get(d.rx_worker)
        if self.trace is not None:
            self.trace.append(("rx", d.rx_time_us, d.rx_worker, str(d.source), d.site,
                               hashlib.sha1(d.payload).hexdigest()[:12]))
        if t is None or not t.up or t.receiver is None:
            self.lost_replies += 1
            return
        t.receiver(d.payload, d.source, d.rx_time_us)


class SimLink(FramedLink):
    """In-memory control link; frames cross it after ``latency_us``."""

    def __init__(self, loop: EventLoop, latency_us: int):
        super().__init__()
        self.loop = loop
        self.latency_us = latency_us
        self.peer: Optional["SimLink"] = None
        self.cut = False
        self._decoder = FrameDecoder()

    @classmethod
    def pair(cls, loop: EventLoop, latency_us: int = 20_000):
        a, b = cls(loop, latency_us), cls(loop, latency_us)
        a.peer, b.peer = b, a
        return a, b

    def _write(self, data: bytes) -> None:
        if not self.cut:
            self.loop.call_later(self.latency_us, self.peer._receive, data)

    def _receive(self, data: bytes) -> None:
        if self.cut or self.closed:
            return
        try:
            messages = self._decoder.feed(data)
        except FrameError:
            self.close()
            return
        for msg in messages:
            if self.on_message is not None and not self.closed:
                self.on_message(msg)

    def close(self) -> None:
        # like a stream FIN: frames already written reach the peer before the close does
        self._closed_here()
        if self.peer is not None and not self.cut:
            self.loop.call_later(self.latency_us, self.peer._closed_here)

    def _closed_here(self) -> None:
        if not self.closed:
            self.closed = True
            if self.on_close is not None:
                self.on_close()

    def sever(self) -> None:
        """Silent failure: nothing crosses the link any more, nobody is told."""
        self.cut = True
        if self.peer is not None:
            self.peer.cut = True


@dataclass
class SimMeasurement:
    spec: MeasurementSpec
    replies: List[ProbeReply]
    run: MeasurementRun

    @property
    def summary(self) -> dict:
        return self.run.summary()


class SimDeployment:
    """Orchestrator, workers and network on one virtual clock."""

    def __init__(self, world: SimWorld, *, token: str = "sim-token", start_us: Optional[int] = None,
                 control_latency_us: int = 20_000, orchestrator_options: Optional[dict] = None,
                 record_trace: bool = True):
        self.world = world
        self.token = token
        self.loop = EventLoop(world.epoch_us if start_us is None else start_us)
        self.network = SimNetwork(world, self.loop, record_trace)
        self.events: list = []
        self.orchestrator = Orchestrator(self.loop, token, log=self.events.append, **(orchestrator_options or {}))
        self.control_latency_us = control_latency_us
        self.workers: Dict[int, Worker] = {}
        self.links: Dict[int, SimLink] = {}
        self.sent_logs: Dict[int, list] = defaultdict(list)
        self.result_arrivals: list = []
        self._next_mid = 1

    def roster(self) -> Dict[int, VantagePoint]:
        return dict(self.world.vp_by_id)

    def start_worker(self, worker_id: int, token: Optional[str] = None) -> Worker:
        vp = self.world.vp_by_id[worker_id]
        transport = self.network.attach(worker_id)
        worker = Worker(vp, self.loop, transport, token or self.token)
        worker.sent_log = self.sent_logs[worker_id]
        w_end, o_end = SimLink.pair(self.loop, self.control_latency_us)
        self.orchestrator.accept(o_end)
        worker.connect(w_end)
        self.workers[worker_id] = worker
        self.links[worker_id] = w_end
        return worker

    def kill_worker(self, worker_id: int) -> None:
        """Crash a worker: its process state is lost and its link goes silent."""
        link = self.links.pop(worker_id, None)
        if link is not None:
            link.sever()
        t = self.network.transports.get(worker_id)
        if t is not None:
            t.up = False
        self.workers.pop(worker_id, None)

    def start(self, worker_ids: Optional[Iterable[int]] = None) -> None:
        for w in (worker_ids if worker_ids is not None else sorted(self.world.vp_by_id)):
            if w not in self.workers:
                self.start_worker(w)
        self.loop.run_for(4 * self.control_latency_us)

    def next_measurement_id(self) -> int:
        mid = self._next_mid
        self._next_mid += 1
        return mid

    def measure(self, spec: MeasurementSpec, targets: Sequence[TargetAddress]) -> SimMeasurement:
        """Run one measurement to completion in virtual time."""
        missing = [w for w in spec.workers if w not in self.workers]
        if missing:
            self.start(missing)
        replies: List[ProbeReply] = []

        def sink(reply: ProbeReply) -> None:
            replies.append(reply)
            self.result_arrivals.append((self.loop.now_us(), reply))

        run = self.orchestrator.submit(spec, targets, sink)
        self.loop.run_until(lambda: run.state is RunState.DONE)
        self.loop.run_for(4 * self.control_latency_us)
        return SimMeasurement(spec, replies, run)


# -- world generation --------------------------------------------------------

_DEFAULT_VPS = [
    (1, "ams", 52.37, 4.90), (2, "nyc", 40.71, -74.01), (3, "lax", 34.05, -118.24),
    (4, "ord", 41.88, -87.63), (5, "gru", -23.55, -46.63), (6, "jnb", -26.20, 28.05),
    (7, "bom", 19.08, 72.88), (8, "sgp", 1.35, 103.82), (9, "nrt", 35.68, 139.69),
    (10, "syd", -33.87, 151.21), (11, "mad", 40.42, -3.70), (12, "sto", 59.33, 18.07),
    (13, "dfw", 32.78, -96.80), (14, "yto", 43.65, -79.38), (15, "mex", 19.43, -99.13),
    (16, "icn", 37.57, 126.98),
]


def make_vp(worker_id: int, name: str, lat: float, lon: float) -> VantagePoint:
    return VantagePoint(
        worker_id, name, lat, lon,
        unicast_address=ipaddress.IPv4Address("198.51.100.0") + worker_id,
        anycast_address=ipaddress.IPv4Address("203.0.113.1"),
        unicast_address6=ipaddress.IPv6Address("2001:db8:ffff::") + worker_id,
        anycast_address6=ipaddress.IPv6Address("2001:db8:aaaa::1"),
    )


def default_vps(count: Optional[int] = None) -> List[VantagePoint]:
    rows = _DEFAULT_VPS if count is None else _DEFAULT_VPS[:count]
    return [make_vp(*row) for row in rows]


def offset_point(lat: float, lon: float, distance_km: float, bearing_deg: float) -> tuple:
    """Destination point at ``distance_km`` along ``bearing_deg`` on the sphere."""
    r = distance_km / 6371.0
    la1, lo1, b = math.radians(lat), math.radians(lon), math.radians(bearing_deg)
    la2 = math.asin(math.sin(la1) * math.cos(r) + math.cos(la1) * math.sin(r) * math.cos(b))
    lo2 = lo1 + math.atan2(math.sin(b) * math.sin(r) * math.cos(la1), math.cos(r) - math.sin(la1) * math.sin(la2))
    lon2 = (math.degrees(lo2) + 540) % 360 - 180
    return round(math.degrees(la2), 4), round(lon2, 4)


def prefix_address(index: int, ip_version: int = 4) -> tuple:
    """Prefix number ``index`` of the simulated address plan and its .1 host."""
    if ip_version == 4:
        base = ipaddress.IPv4Address("10.0.0.0") + (index << 8)
        return Prefix.of(base, 24), base + 1
    base = ipaddress.IPv6Address("2001:db8::") + (index << 80)
    return Prefix.of(base, 48), base + 1


def generate_world(seed: int, *, vps: Optional[Sequence[VantagePoint]] = None,
                   n_unicast: int = 950, n_anycast: int = 50, n_confined: int = 0,
                   n_partial: int = 0, n_unresponsive: int = 0, ip_version: int = 4,
                   sites_per_anycast: Sequence[int] = (2, 4), site_spread_km: float = 150.0,
                   unicast_spread_km: float = 2000.0, tcp_only: int = 0,
                   shuffle: bool = True, **params) -> SimWorld:
    """Random world with the requested mix of target kinds.

    Anycast sites sit within ``site_spread_km`` of distinct VPs and are
    re-drawn until their catchments span at least two VPs; ``n_confined``
    extra anycast prefixes are drawn until all their sites fall into one
    VP's catchment. ``tcp_only`` of the anycast prefixes answer TCP only.
    """
    rng = random.Random(seed)
    vps = list(vps) if vps is not None else default_vps()
    probe_world = SimWorld(seed, tuple(vps), (), **{k: v for k, v in params.items() if k != "seed"})
    targets: List[SimTarget] = []
    kinds = ([TargetKind.UNICAST] * n_unicast + [TargetKind.ANYCAST] * n_anycast
             + ["confined"] * n_confined + [TargetKind.PARTIAL] * n_partial
             + [TargetKind.UNRESPONSIVE] * n_unresponsive)
    if shuffle:
        rng.shuffle(kinds)
    tcp_left = tcp_only

    def near(vp, spread):
        return offset_point(vp.lat, vp.lon, rng.uniform(0, spread), rng.uniform(0, 360))

    for i, kind in enumerate(kinds):
        prefix, addr = prefix_address(i, ip_version)
        if kind is TargetKind.UNICAST:
            lat, lon = near(rng.choice(vps), unicast_spread_km)
            targets.append(SimTarget(prefix, kind, addr, (Site(f"u{i}", lat, lon),)))
        elif kind is TargetKind.UNRESPONSIVE:
            targets.append(SimTarget(prefix, kind, addr))
        elif kind is TargetKind.ANYCAST:
            services = ALL_PROTOCOLS
            if tcp_left > 0:
                services, tcp_left = frozenset({Protocol.TCP}), tcp_left - 1
            while True:
                k = rng.randint(sites_per_anycast[0], min(sites_per_anycast[1], len(vps)))
                anchors = rng.sample(vps, k)
                sites = tuple(Site(f"a{i}-{vp.name}", *near(vp, site_spread_km)) for vp in anchors)
                t = SimTarget(prefix, kind, addr, sites, services=services)
                if _catchment_count(probe_world, t) >= 2:
                    break
            targets.append(t)
        elif kind == "confined":
            while True:
                anchor = rng.choice(vps)
                k = rng.randint(2, 3)
                sites = tuple(Site(f"c{i}-{anchor.name}{j}", *near(anchor, 400.0)) for j in range(k))
                t = SimTarget(prefix, TargetKind.ANYCAST, addr, sites)
                if _catchment_count(probe_world, t) == 1:
                    break
            targets.append(t)
        else:
            targets.append(partial_target(prefix, rng.sample(vps, 2), rng.choice(vps), rng))
    return SimWorld(seed, tuple(vps), tuple(targets), **params)


def partial_target(prefix: Prefix, anycast_anchors: Sequence[VantagePoint], unicast_anchor: VantagePoint,
                   rng: random.Random, n_anycast: int = 6, n_unicast: int = 200) -> SimTarget:
    """A /24 with ``n_anycast`` anycast hosts and ``n_unicast`` unicast hosts."""
    base = prefix.base_address
    anycast = tuple(base + 1 + j for j in range(n_anycast))
    unicast = tuple(base + 10 + j for j in range(n_unicast))
    sites = tuple(Site(f"p-{vp.name}", *offset_point(vp.lat, vp.lon, rng.uniform(0, 150), rng.uniform(0, 360)))
                  for vp in anycast_anchors)
    u = unicast_anchor
    usite = Site(f"pu-{u.name}", *offset_point(u.lat, u.lon, rng.uniform(0, 150), rng.uniform(0, 360)))
    return SimTarget(prefix, TargetKind.PARTIAL, anycast[0], sites, usite, anycast, unicast)


def _catchment_count(world: SimWorld, target: SimTarget) -> int:
    reached = {world.serving_site(target.sites, vp) for vp in world.vps}
    return len({world.preference(target, "main", i)[0].worker_id for i in reached})


# -- scenario runner ---------------------------------------------------------

def simulate(world: SimWorld, out_dir, *, protocol: Protocol = Protocol.ICMP, rate_pps: float = 1000.0,
             offset_ms: int = 1000, source_mode: SourceMode = SourceMode.ANYCAST,
             workers: Optional[Sequence[int]] = None) -> dict:
    """Run one measurement over the whole world and dump trace, replies and ground truth."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dep = SimDeployment(world)
    workers = list(workers) if workers is not None else sorted(world.vp_by_id)
    dep.start(workers)
    spec = MeasurementSpec(1, protocol, world.targets[0].prefix.ip_version if world.targets else 4,
                           source_mode, rate_pps, tuple(workers), offset_ms,
                           dns_probe_domain="probe.sim.example")
    result = dep.measure(spec, world.hitlist())
    with open(out / "hitlist.txt", "w") as fh:
        for t in world.hitlist():
            fh.write(f"{t.prefix} {t.address}\n")
    with open(out / "replies.jsonl", "w") as fh:
        for r in result.replies:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    with open(out / "trace.jsonl", "w") as fh:
        for ev in dep.network.trace:
            fh.write(json.dumps(list(ev)) + "\n")
    with open(out / "ground_truth.jsonl", "w") as fh:
        for prefix, gt in sorted(world.ground_truth(workers).items()):
            fh.write(json.dumps(gt.to_dict(), sort_keys=True) + "\n")
    with open(out / "vps.json", "w") as fh:
        json.dump([vp.to_dict() for vp in world.vps], fh, indent=1, sort_keys=True)
    summary = result.summary
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary
