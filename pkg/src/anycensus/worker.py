"""Vantage-point agent.

A worker fires the probes it is streamed at their absolute fire times,
matches captured traffic against the running measurement, and ships every
matched reply to the orchestrator within one flush interval. It keeps no
hitlist and no result store; memory is bounded by the in-flight window.
"""

from __future__ import annotations

import logging
import select
import socket
import threading
from collections import Counter, OrderedDict
from typing import Callable, Optional, Protocol as TypingProtocol

from .clock import Scheduler
from .domain import (
    DEFAULT_PREFIX_LEN, IPAddress, MeasurementSpec, ProbeReply, Protocol, TargetAddress,
    VantagePoint, ip,
)
from .errors import EncodingError
from .probecodec import EncodedProbe, PendingTable, decode_reply, encode
from .wire import (
    Ack, EndMeasurement, FramedLink, Heartbeat, Hello, Message, Reject, ResultBatch,
    StartMeasurement, TargetBatch, Welcome,
)

logger = logging.getLogger("anycensus.worker")

FLUSH_US = 100_000
STALE_US = 1_000_000
CAPABILITIES = ("icmp", "tcp", "dns_a", "dns_chaos", "ipv6")

Receiver = Callable[[bytes, IPAddress, int], None]


class ProbeTransport(TypingProtocol):
    """Sends encoded probes and reports captured transport messages.

    ``set_receiver`` registers ``fn(payload, source_address, rx_time_us)``.
    """

    def send(self, probe: EncodedProbe, source: IPAddress) -> None: ...

    def set_receiver(self, fn: Receiver) -> None: ...

    def close(self) -> None: ...


class Worker:
    def __init__(self, vp: VantagePoint, scheduler: Scheduler, transport: ProbeTransport, token: str,
                 *, flush_us: int = FLUSH_US, stale_us: int = STALE_US, keep_sent_log: bool = False):
        self.vp = vp
        self.worker_id = vp.worker_id
        self.scheduler = scheduler
        self.transport = transport
        self.token = token
        self.flush_us = flush_us
        self.stale_us = stale_us
        self.counters: Counter = Counter()
        self.spec: Optional[MeasurementSpec] = None
        self.pending = PendingTable()
        self.link: Optional[FramedLink] = None
        self.welcomed = False
        self.rejected: Optional[str] = None
        self.last_contact_us = scheduler.now_us()
        self.sent_log: Optional[list] = [] if keep_sent_log else None
        self._buffer: list = []
        self._unacked: "OrderedDict[int, ResultBatch]" = OrderedDict()
        self._flusher = None
        self._icmp_seq = 0
        transport.set_receiver(self._on_capture)

    # -- control plane --------------------------------------------------------

    def connect(self, link: FramedLink) -> None:
        self.link = link
        self.welcomed = False
        link.on_message = self.on_message
        link.send(Hello(self.worker_id, self.token, CAPABILITIES, vp=self.vp.to_dict()))

    def on_message(self, msg: Message) -> None:
        self.last_contact_us = self.scheduler.now_us()
        if isinstance(msg, Welcome):
            self.welcomed = True
            for batch in self._unacked.values():
                self._unacked_resend(batch)
        elif isinstance(msg, Reject):
            self.rejected = msg.reason
            logger.error("orchestrator rejected worker %d: %s", self.worker_id, msg.reason)
        elif isinstance(msg, StartMeasurement):
            self._start(msg.spec)
        elif isinstance(msg, TargetBatch):
            if self.spec is None or msg.measurement_id != self.spec.measurement_id:
                self.counters["foreign_batches"] += 1
                return
            for target, at in msg.entries:
                self.fire(target, at)
        elif isinstance(msg, EndMeasurement):
            if self.spec is not None and msg.measurement_id == self.spec.measurement_id:
                self._end()
        elif isinstance(msg, Heartbeat):
            self.link.send(Heartbeat(self.scheduler.now_us(), echo_us=msg.sent_at_us))
        elif isinstance(msg, Ack):
            for seq in [s for s in self._unacked if s <= msg.ack_seq]:
                del self._unacked[seq]

    def _unacked_resend(self, batch: ResultBatch) -> None:
        if self.spec is not None and batch.measurement_id == self.spec.measurement_id:
            seq = self.link.send(batch)
            self._unacked[seq] = batch

    def _start(self, spec: MeasurementSpec) -> None:
        if self.spec is not None and self.spec.measurement_id == spec.measurement_id:
            return  # replay after reconnect
        self.spec = spec
        self.pending = PendingTable()
        self._buffer = []
        self._unacked.clear()

    def _end(self) -> None:
        self.flush()
        self.spec = None

    def flush(self) -> None:
        if self._flusher is not None:
            self._flusher.cancel()
            self._flusher = None
        if not self._buffer or self.spec is None or self.link is None:
            return
        batch = ResultBatch(self.spec.measurement_id, tuple(self._buffer))
        self._buffer = []
        seq = self.link.send(batch)
        self._unacked[seq] = batch

    # -- probing --------------------------------------------------------------

    def fire(self, target: TargetAddress, fire_at_us: int) -> None:
        now = self.scheduler.now_us()
        if fire_at_us < now - self.stale_us:
            self.counters["stale_targets"] += 1
            return
        spec = self.spec
        self.scheduler.call_at(max(fire_at_us, now), self._send_probe, spec, target)

    def _send_probe(self, spec: MeasurementSpec, target: TargetAddress) -> None:
        if self.spec is not spec:
            self.counters["cancelled"] += 1
            return
        now = self.scheduler.now_us()
        try:
            source = self.vp.source_address(spec.source_mode, target.ip_version)
            self._icmp_seq = (self._icmp_seq + 1) & 0xFFFF
            probe = encode(spec, target, self.worker_id, now, sequence=self._icmp_seq, src_address=source)
        except (EncodingError, ValueError) as exc:
            self.counters["encode_errors"] += 1
            logger.debug("cannot encode probe to %s: %s", target, exc)
            return
        if spec.protocol is Protocol.DNS_CHAOS:
            self.pending.insert(target.address, self.worker_id, now, self.worker_id, now)
        try:
            self.transport.send(probe, source)
        except OSError as exc:
            self.counters["send_failures"] += 1
            logger.debug("send to %s failed: %s", target, exc)
            return
        self.counters["sent"] += 1
        if self.sent_log is not None:
            self.sent_log.append((spec.measurement_id, str(target.address), now))

    def _on_capture(self, payload: bytes, source: IPAddress, rx_time_us: int) -> None:
        reply = self.capture(payload, source, rx_time_us)
        if reply is not None:
            self._buffer.append(reply)
            # a reply waits at most one flush interval before it is shipped
            if self._flusher is None:
                self._flusher = self.scheduler.call_at(self.scheduler.now_us() + self.flush_us, self.flush)

    def capture(self, payload: bytes, source, rx_time_us: int) -> Optional[ProbeReply]:
        spec = self.spec
        if spec is None:
            self.counters["unmatched"] += 1
            return None
        decoded = decode_reply(spec, payload, self.pending, source=source, now_us=rx_time_us,
                               local_worker=self.worker_id)
        if decoded is None:
            self.counters["unmatched"] += 1
            return None
        addr = ip(source)
        target = TargetAddress.of(addr, DEFAULT_PREFIX_LEN[addr.version])
        self.counters["captured"] += 1
        return ProbeReply(spec.measurement_id, target, decoded.src_worker, self.worker_id,
                          decoded.tx_time_us, rx_time_us, spec.protocol, decoded.chaos_value)


# -- raw sockets -------------------------------------------------------------

_RAW_PROTO = {
    (4, Protocol.ICMP): socket.IPPROTO_ICMP,
    (6, Protocol.ICMP): socket.IPPROTO_ICMPV6,
    (4, Protocol.TCP): socket.IPPROTO_TCP,
    (6, Protocol.TCP): socket.IPPROTO_TCP,
    (4, Protocol.DNS_A): socket.IPPROTO_UDP,
    (6, Protocol.DNS_A): socket.IPPROTO_UDP,
    (4, Protocol.DNS_CHAOS): socket.IPPROTO_UDP,
    (6, Protocol.DNS_CHAOS): socket.IPPROTO_UDP,
}


def check_raw_privilege() -> None:
    """Raise PermissionError unless raw sockets can be opened."""
    s = socket.socket(socket.AF_INET, socket.SOCK_RAW, socket.IPPROTO_ICMP)
    s.close()


class RawNetTransport:
    """Probe transport on raw IP sockets (needs CAP_NET_RAW).

    One socket per (IP version, IP protocol) is opened lazily; each has a
    reader thread that strips the IPv4 header and hands the transport message
    to the receiver. Receive times are userspace timestamps.
    """

    def __init__(self, clock: Callable[[], int]):
        check_raw_privilege()
        self.clock = clock
        self._receiver: Optional[Receiver] = None
        self._sockets: dict = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list = []

    def set_receiver(self, fn: Receiver) -> None:
        self._receiver = fn

    def _socket(self, version: int, proto: int) -> socket.socket:
        with self._lock:
            sock = self._sockets.get((version, proto))
            if sock is None:
                family = socket.AF_INET if version == 4 else socket.AF_INET6
                sock = socket.socket(family, socket.SOCK_RAW, proto)
                self._sockets[(version, proto)] = sock
                t = threading.Thread(target=self._read_loop, args=(sock, version), daemon=True)
                t.start()
                self._threads.append(t)
            return sock

    def open(self, ip_version: int, protocol: Protocol) -> None:
        """Start capturing before the first probe goes out."""
        self._socket(ip_version, _RAW_PROTO[(ip_version, protocol)])

    def send(self, probe: EncodedProbe, source: IPAddress) -> None:
        version = probe.target.ip_version
        sock = self._socket(version, _RAW_PROTO[(version, probe.protocol)])
        sock.sendto(probe.wire_bytes, (str(probe.target.address), 0))

    def _read_loop(self, sock: socket.socket, version: int) -> None:
        while not self._stop.is_set():
            try:
                ready, _, _ = select.select([sock], [], [], 0.2)
                if not ready:
                    continue
                data, addr = sock.recvfrom(65535)
            except OSError:
                return
            rx = self.clock()
            if version == 4:
                if len(data) < 20:
                    continue
                data = data[(data[0] & 0x0F) * 4:]
            if self._receiver is not None:
                self._receiver(data, ip(addr[0]), rx)

    def close(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=1)
        for sock in self._sockets.values():
            sock.close()
