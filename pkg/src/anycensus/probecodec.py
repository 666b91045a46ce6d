"""Probe construction and reply matching for ICMP, TCP and DNS over UDP.

Every probe carries (measurement id, worker id, transmit time) in a field the
target echoes back:

* ICMP echo: an 18 byte payload ``b"LACS" | mid:u32 | worker:u16 | tx_us:u64``.
* TCP SYN/ACK: the acknowledgement number ``worker:6 | tx_ms mod 2**26``; the
  RST elicited by it carries that value as its sequence number.
* DNS A/AAAA: the query name ``<mid>-<worker>-<tx_us>.<probe domain>`` (hex).
* DNS CHAOS TXT ``hostname.bind``: only the transaction id (= worker id) is
  echoed, so matching goes through a :class:`PendingTable`.

Byte layouts are documented in ``docs/wire-probes.md``. ``wire_bytes`` always
holds the transport message above the IP header (ICMP message, TCP segment,
UDP datagram).
"""

from __future__ import annotations

import functools
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

from .domain import IPAddress, MeasurementSpec, Protocol, TargetAddress, ip
from .errors import EncodingError, QnameTooLong, WorkerIdOverflow

MAGIC = b"LACS"
ICMP_HEADER = struct.Struct("!BBHHH")
ICMP_PAYLOAD = struct.Struct("!4sIHQ")
TCP_HEADER = struct.Struct("!HHIIBBHHH")
UDP_HEADER = struct.Struct("!HHHH")
DNS_HEADER = struct.Struct("!HHHHHH")

ICMP_ECHO_REQUEST = {4: 8, 6: 128}
ICMP_ECHO_REPLY = {4: 0, 6: 129}
IPPROTO = {"icmp4": 1, "icmp6": 58, "tcp": 6, "udp": 17}

EPHEMERAL_BASE = 49152
TCP_SYN, TCP_RST, TCP_ACK = 0x02, 0x04, 0x10
TCP_WORKER_BITS = 6
TCP_TIME_BITS = 26
TCP_TIME_MOD = 1 << TCP_TIME_BITS

DNS_PORT = 53
QTYPE_A, QTYPE_AAAA, QTYPE_TXT = 1, 28, 16
QCLASS_IN, QCLASS_CH = 1, 3
CHAOS_QNAME = "hostname.bind"
QNAME_MAX = 253
LABEL_MAX = 63

PENDING_TTL_US = 10_000_000


@dataclass(frozen=True)
class EncodedProbe:
    protocol: Protocol
    wire_bytes: bytes
    target: TargetAddress
    src_worker: int
    tx_time_us: int
    measurement_id: int = 0


@dataclass(frozen=True)
class DecodedReply:
    measurement_id: int
    src_worker: int
    tx_time_us: int
    valid: bool
    chaos_value: Optional[str] = None


# -- checksums ---------------------------------------------------------------

def internet_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


@functools.lru_cache(maxsize=4096)
def _pseudo_header(src: IPAddress, dst: IPAddress, proto: int, length: int) -> bytes:
    if src.version == 4:
        return src.packed + dst.packed + struct.pack("!BBH", 0, proto, length)
    return src.packed + dst.packed + struct.pack("!I3xB", length, proto)


def transport_checksum(src: IPAddress, dst: IPAddress, proto: int, segment: bytes) -> int:
    """Checksum over the IPv4/IPv6 pseudo-header plus ``segment``."""
    csum = internet_checksum(_pseudo_header(src, dst, proto, len(segment)) + segment)
    # UDP transmits an all-zero result as 0xFFFF
    if proto == IPPROTO["udp"] and csum == 0:
        return 0xFFFF
    return csum


def _with_checksum(buf: bytearray, offset: int, csum: int) -> bytes:
    struct.pack_into("!H", buf, offset, csum)
    return bytes(buf)


def icmp_message(ip_version: int, icmp_type: int, ident: int, seq: int, payload: bytes,
                 src: Optional[IPAddress] = None, dst: Optional[IPAddress] = None) -> bytes:
    """ICMP/ICMPv6 message with a correct checksum.

    ICMPv6 checksums cover a pseudo-header; without both addresses the field
    is left zero for the kernel to fill (raw ICMPv6 sockets always do).
    """
    buf = bytearray(ICMP_HEADER.pack(icmp_type, 0, 0, ident, seq) + payload)
    if ip_version == 4:
        return _with_checksum(buf, 2, internet_checksum(bytes(buf)))
    if src is not None and dst is not None:
        return _with_checksum(buf, 2, transport_checksum(src, dst, IPPROTO["icmp6"], bytes(buf)))
    return bytes(buf)


def tcp_segment(sport: int, dport: int, seq: int, ack: int, flags: int,
                src: Optional[IPAddress] = None, dst: Optional[IPAddress] = None,
                window: int = 65535) -> bytes:
    buf = bytearray(TCP_HEADER.pack(sport, dport, seq, ack, 5 << 4, flags, window, 0, 0))
    if src is not None and dst is not None:
        return _with_checksum(buf, 16, transport_checksum(src, dst, IPPROTO["tcp"], bytes(buf)))
    return bytes(buf)


def udp_datagram(sport: int, dport: int, payload: bytes,
                 src: Optional[IPAddress] = None, dst: Optional[IPAddress] = None) -> bytes:
    buf = bytearray(UDP_HEADER.pack(sport, dport, UDP_HEADER.size + len(payload), 0) + payload)
    if src is not None and dst is not None:
        return _with_checksum(buf, 6, transport_checksum(src, dst, IPPROTO["udp"], bytes(buf)))
    return bytes(buf)


# -- encoders ----------------------------------------------------------------

def _check_protocol(spec: MeasurementSpec, *allowed: Protocol) -> None:
    if spec.protocol not in allowed:
        raise EncodingError(f"measurement protocol {spec.protocol.value} cannot use this encoder")


def icmp_payload(measurement_id: int, worker: int, tx_time_us: int) -> bytes:
    return ICMP_PAYLOAD.pack(MAGIC, measurement_id, worker, tx_time_us)


def encode_icmp(spec: MeasurementSpec, target: TargetAddress, worker: int, tx_time_us: int,
                *, sequence: int = 0, src_address: Optional[IPAddress] = None) -> EncodedProbe:
    _check_protocol(spec, Protocol.ICMP)
    v = target.ip_version
    wire = icmp_message(v, ICMP_ECHO_REQUEST[v], worker, sequence & 0xFFFF,
                        icmp_payload(spec.measurement_id, worker, tx_time_us),
                        src_address, target.address)
    return EncodedProbe(Protocol.ICMP, wire, target, worker, tx_time_us, spec.measurement_id)


def tcp_ack_value(worker: int, tx_time_us: int) -> int:
    if not 0 <= worker < (1 << TCP_WORKER_BITS):
        raise WorkerIdOverflow(f"worker id {worker} does not fit {TCP_WORKER_BITS} bits")
    return (worker << TCP_TIME_BITS) | ((tx_time_us // 1000) % TCP_TIME_MOD)


def split_tcp_ack(value: int) -> tuple:
    """Inverse of :func:`tcp_ack_value`: ``(worker, tx_ms mod 2**26)``."""
    return value >> TCP_TIME_BITS, value & (TCP_TIME_MOD - 1)


def unwrap_tcp_ms(t_ms_mod: int, now_us: int) -> int:
    """Latest transmit time (µs) <= now whose milliseconds match ``t_ms_mod``."""
    now_ms = now_us // 1000
    return (now_ms - ((now_ms - t_ms_mod) % TCP_TIME_MOD)) * 1000


def encode_tcp(spec: MeasurementSpec, target: TargetAddress, worker: int, tx_time_us: int,
               *, src_address: Optional[IPAddress] = None) -> EncodedProbe:
    _check_protocol(spec, Protocol.TCP)
    ack = tcp_ack_value(worker, tx_time_us)
    wire = tcp_segment(EPHEMERAL_BASE + worker, spec.tcp_dst_port, spec.measurement_id, ack,
                       TCP_SYN | TCP_ACK, src_address, target.address)
    return EncodedProbe(Protocol.TCP, wire, target, worker, tx_time_us, spec.measurement_id)


@functools.lru_cache(maxsize=256)
def encode_name(name: str) -> bytes:
    name = name.rstrip(".")
    if len(name) > QNAME_MAX:
        raise QnameTooLong(f"query name is {len(name)} bytes, limit {QNAME_MAX}")
    out = bytearray()
    for label in name.split("."):
        raw = label.encode("ascii")
        if not raw or len(raw) > LABEL_MAX:
            raise QnameTooLong(f"invalid label length {len(raw)} in {name!r}")
        out.append(len(raw))
        out += raw
    return bytes(out) + b"\x00"


def dns_qname(measurement_id: int, worker: int, tx_time_us: int, domain: str) -> str:
    return f"{measurement_id:x}-{worker:x}-{tx_time_us:x}.{domain.strip('.')}"


def dns_source_port(worker: int) -> int:
    return EPHEMERAL_BASE + (worker & 0x3FFF)


def encode_dns(spec: MeasurementSpec, target: TargetAddress, worker: int, tx_time_us: int,
               *, src_address: Optional[IPAddress] = None) -> EncodedProbe:
    _check_protocol(spec, Protocol.DNS_A, Protocol.DNS_CHAOS)
    if spec.protocol is Protocol.DNS_A:
        qname = dns_qname(spec.measurement_id, worker, tx_time_us, spec.dns_probe_domain)
        if len(qname) > QNAME_MAX:
            raise QnameTooLong(f"query name is {len(qname)} bytes, limit {QNAME_MAX}")
        # the first label is per probe, the rest is cached per domain
        first, _, rest = qname.partition(".")
        wire_name = bytes([len(first)]) + first.encode("ascii") + encode_name(rest)
        qtype = QTYPE_A if target.ip_version == 4 else QTYPE_AAAA
        qclass, flags = QCLASS_IN, 0x0100
    else:
        wire_name, qtype, qclass, flags = encode_name(CHAOS_QNAME), QTYPE_TXT, QCLASS_CH, 0x0000
    message = (DNS_HEADER.pack(worker, flags, 1, 0, 0, 0) + wire_name
               + struct.pack("!HH", qtype, qclass))
    wire = udp_datagram(dns_source_port(worker), DNS_PORT, message, src_address, target.address)
    return EncodedProbe(spec.protocol, wire, target, worker, tx_time_us, spec.measurement_id)


def encode(spec: MeasurementSpec, target: TargetAddress, worker: int, tx_time_us: int,
           *, sequence: int = 0, src_address: Optional[IPAddress] = None) -> EncodedProbe:
    """Dispatch to the encoder for ``spec.protocol``."""
    if spec.protocol is Protocol.ICMP:
        return encode_icmp(spec, target, worker, tx_time_us, sequence=sequence, src_address=src_address)
    if spec.protocol is Protocol.TCP:
        return encode_tcp(spec, target, worker, tx_time_us, src_address=src_address)
    return encode_dns(spec, target, worker, tx_time_us, src_address=src_address)


def flow_key(protocol: Protocol, wire_bytes: bytes, src: IPAddress, dst: IPAddress) -> tuple:
    """The 5-tuple a flow-hashing load balancer sees.

    ICMP has no ports; the echo identifier stands in for the source port, as
    most hardware hashers treat it.
    """
    if protocol is Protocol.ICMP:
        proto = IPPROTO["icmp4"] if dst.version == 4 else IPPROTO["icmp6"]
        ident = struct.unpack_from("!H", wire_bytes, 4)[0]
        return (str(src), str(dst), proto, ident, 0)
    proto = IPPROTO["tcp"] if protocol is Protocol.TCP else IPPROTO["udp"]
    sport, dport = struct.unpack_from("!HH", wire_bytes, 0)
    return (str(src), str(dst), proto, sport, dport)


# -- pending table -----------------------------------------------------------

class PendingTable:
    """Outstanding probes keyed by (target, match key), expiring after a TTL.

    Sender and receiver paths may run in different threads, so every method
    takes the lock. Entries are kept in insertion order, which lets
    :meth:`purge` stop at the first live entry.
    """

    def __init__(self, ttl_us: int = PENDING_TTL_US):
        self.ttl_us = ttl_us
        self._entries: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def insert(self, target, key: int, tx_time_us: int, worker_id: int, now_us: Optional[int] = None) -> None:
        now = tx_time_us if now_us is None else now_us
        with self._lock:
            self._purge_locked(now)
            k = (str(target), key)
            self._entries[k] = (tx_time_us, worker_id, now + self.ttl_us)
            self._entries.move_to_end(k)

    def take(self, target, key: int, now_us: int) -> Optional[tuple]:
        """Remove and return ``(tx_time_us, worker_id)`` if present and unexpired."""
        with self._lock:
            entry = self._entries.pop((str(target), key), None)
        if entry is None or entry[2] <= now_us:
            return None
        return entry[0], entry[1]

    def purge(self, now_us: int) -> int:
        with self._lock:
            return self._purge_locked(now_us)

    def _purge_locked(self, now_us: int) -> int:
        dropped = 0
        while self._entries:
            k, entry = next(iter(self._entries.items()))
            if entry[2] > now_us:
                break
            del self._entries[k]
            dropped += 1
        return dropped

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


# -- decoders ----------------------------------------------------------------

def parse_icmp_payload(payload: bytes) -> Optional[tuple]:
    if len(payload) < ICMP_PAYLOAD.size:
        return None
    return ICMP_PAYLOAD.unpack_from(payload)


def decode_icmp(spec: MeasurementSpec, data: bytes) -> Optional[DecodedReply]:
    """Parse an echo reply. None if it is not one; ``valid`` False on a foreign payload."""
    if len(data) < ICMP_HEADER.size:
        return None
    icmp_type = data[0]
    if icmp_type not in (ICMP_ECHO_REPLY[4], ICMP_ECHO_REPLY[6]):
        return None
    fields = parse_icmp_payload(data[ICMP_HEADER.size:])
    if fields is None:
        return None
    magic, mid, worker, tx_time = fields
    valid = magic == MAGIC and mid == spec.measurement_id and worker in spec.workers
    return DecodedReply(mid, worker, tx_time, valid)


def decode_tcp(spec: MeasurementSpec, data: bytes, now_us: Optional[int] = None) -> Optional[DecodedReply]:
    if len(data) < TCP_HEADER.size:
        return None
    sport, dport, seq, _ack, _off, flags, _win, _csum, _urg = TCP_HEADER.unpack_from(data)
    if not flags & TCP_RST:
        return None
    worker, t_ms = split_tcp_ack(seq)
    valid = (sport == spec.tcp_dst_port and dport == EPHEMERAL_BASE + worker
             and worker in spec.workers)
    tx_time = t_ms * 1000 if now_us is None else unwrap_tcp_ms(t_ms, now_us)
    return DecodedReply(spec.measurement_id, worker, tx_time, valid)


def _read_name(msg: bytes, offset: int) -> tuple:
    """Read a possibly compressed name; returns (labels, offset after name)."""
    labels = []
    end = None
    jumps = 0
    total = 0
    while True:
        if offset >= len(msg):
            raise ValueError("name runs past message")
        length = msg[offset]
        if length & 0xC0 == 0xC0:
            if offset + 1 >= len(msg):
                raise ValueError("truncated pointer")
            if end is None:
                end = offset + 2
            offset = ((length & 0x3F) << 8) | msg[offset + 1]
            jumps += 1
            if jumps > 16:
                raise ValueError("pointer loop")
            continue
        if length & 0xC0:
            raise ValueError("bad label type")
        offset += 1
        if length == 0:
            break
        if offset + length > len(msg):
            raise ValueError("label runs past message")
        labels.append(msg[offset:offset + length].decode("ascii", "replace"))
        total += length + 1
        if total > 255:
            raise ValueError("name too long")
        offset += length
    return labels, (end if end is not None else offset)


def _parse_txt_answer(msg: bytes, offset: int, ancount: int) -> Optional[str]:
    for _ in range(ancount):
        _, offset = _read_name(msg, offset)
        if offset + 10 > len(msg):
            return None
        rtype, _rclass, _ttl, rdlen = struct.unpack_from("!HHIH", msg, offset)
        offset += 10
        rdata = msg[offset:offset + rdlen]
        if len(rdata) < rdlen:
            return None
        offset += rdlen
        if rtype != QTYPE_TXT:
            continue
        parts, i = [], 0
        while i < len(rdata):
            n = rdata[i]
            parts.append(rdata[i + 1:i + 1 + n].decode("utf-8", "replace"))
            i += 1 + n
        return "".join(parts)
    return None


def decode_dns(spec: MeasurementSpec, data: bytes, pending: Optional[PendingTable] = None,
               *, source=None, now_us: int = 0, local_worker: Optional[int] = None) -> Optional[DecodedReply]:
    if len(data) < UDP_HEADER.size + DNS_HEADER.size:
        return None
    msg = data[UDP_HEADER.size:]
    txid, flags, qdcount, ancount, _ns, _ar = DNS_HEADER.unpack_from(msg)
    if not flags & 0x8000 or qdcount < 1:
        return None
    try:
        labels, offset = _read_name(msg, DNS_HEADER.size)
        if offset + 4 > len(msg):
            return None
        _qtype, qclass = struct.unpack_from("!HH", msg, offset)
        offset += 4
        for _ in range(qdcount - 1):
            _, offset = _read_name(msg, offset)
            offset += 4
        if spec.protocol is Protocol.DNS_A:
            domain = spec.dns_probe_domain.strip(".").lower()
            if len(labels) < 2 or ".".join(labels[1:]).lower() != domain:
                return DecodedReply(0, txid, 0, False)
            parts = labels[0].split("-")
            if len(parts) != 3:
                return DecodedReply(0, txid, 0, False)
            mid, worker, tx_time = (int(p, 16) for p in parts)
            valid = (mid == spec.measurement_id and worker == txid and worker in spec.workers
                     and qclass == QCLASS_IN)
            return DecodedReply(mid, worker, tx_time, valid)
        if ".".join(labels).lower() != CHAOS_QNAME or qclass != QCLASS_CH or txid not in spec.workers:
            return DecodedReply(0, txid, 0, False)
        chaos = _parse_txt_answer(msg, offset, ancount)
    except (ValueError, struct.error):
        return None
    entry = pending.take(source, txid, now_us) if pending is not None and source is not None else None
    if entry is not None:
        return DecodedReply(spec.measurement_id, entry[1], entry[0], True, chaos)
    if local_worker is not None and txid != local_worker:
        # probe sent by another site; its transmit time lives in that worker's table
        return DecodedReply(spec.measurement_id, txid, 0, True, chaos)
    return DecodedReply(spec.measurement_id, txid, 0, False, chaos)


def decode_reply(spec: MeasurementSpec, response_bytes: bytes, pending_table: Optional[PendingTable] = None,
                 *, source=None, now_us: Optional[int] = None,
                 local_worker: Optional[int] = None) -> Optional[DecodedReply]:
    """Match a captured transport message against the ongoing measurement.

    Returns a valid :class:`DecodedReply` or None; never raises on malformed
    input.
    """
    try:
        if spec.protocol is Protocol.ICMP:
            out = decode_icmp(spec, response_bytes)
        elif spec.protocol is Protocol.TCP:
            out = decode_tcp(spec, response_bytes, now_us)
        else:
            out = decode_dns(spec, response_bytes, pending_table,
                             source=ip(source) if source is not None else None,
                             now_us=now_us or 0, local_worker=local_worker)
    except (ValueError, struct.error, UnicodeError):
        return None
    if out is None or not out.valid:
        return None
    return out
