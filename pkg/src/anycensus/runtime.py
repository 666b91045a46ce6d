"""Live (wall-clock) deployment on asyncio.

* :func:`serve_orchestrator` listens for workers and for CLI control clients.
* :func:`run_worker` keeps a worker connected, reconnecting with backoff.
* :func:`submit` is the CLI side of the control protocol: one ``Submit``
  in, a stream of ``ResultBatch`` frames and a final ``RunSummary`` out.
* :class:`SimSocketServer` / :class:`SimSocketTransport` let real worker
  processes probe a :class:`~anycensus.netsim.SimWorld` over a unix socket
  (``worker --transport sim``) instead of the network.
"""

from __future__ import annotations

import asyncio
import base64
import json
import logging
import struct
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .clock import AsyncioScheduler
from .domain import (
    IPAddress, MeasurementSpec, Prefix, ProbeReply, Protocol, SourceMode, TargetAddress, VantagePoint, ip,
)
from .errors import AnycensusError, ConfigError, FrameError
from .orchestrator import MeasurementRun, Orchestrator
from .probecodec import EncodedProbe
from .wire import FrameDecoder, FramedLink, Message, Reject, ResultBatch, RunSummary, Submit
from .worker import Worker

logger = logging.getLogger("anycensus.runtime")

RESULT_FLUSH_S = 0.1
RECONNECT_MIN_S = 1.0
RECONNECT_MAX_S = 30.0


def parse_hostport(text: str, default_port: int) -> Tuple[str, int]:
    if text.startswith("["):
        host, _, rest = text[1:].partition("]")
        port = rest.lstrip(":")
    elif text.count(":") == 1:
        host, port = text.split(":")
    else:
        host, port = text, ""
    try:
        return host or "127.0.0.1", int(port) if port else default_port
    except ValueError:
        raise ConfigError(f"bad address {text!r}; expected host:port") from None


class StreamLink(FramedLink):
    """Framed link over an asyncio stream pair."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        super().__init__()
        self.reader = reader
        self.writer = writer
        self.done = asyncio.get_running_loop().create_future()

    def _write(self, data: bytes) -> None:
        if not self.writer.is_closing():
            self.writer.write(data)

    async def pump(self) -> None:
        """Read frames until EOF or a framing error, dispatching to ``on_message``."""
        decoder = FrameDecoder()
        try:
            while not self.closed:
                chunk = await self.reader.read(65536)
                if not chunk:
                    break
                for msg in decoder.feed(chunk):
                    if self.on_message is not None and not self.closed:
                        self.on_message(msg)
        except FrameError as exc:
            logger.warning("closing link after framing error: %s", exc)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            self.close()

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        try:
            self.writer.close()
        except RuntimeError:
            pass
        if self.on_close is not None:
            self.on_close()
        if not self.done.done():
            self.done.set_result(None)


# -- orchestrator ------------------------------------------------------------

class OrchestratorServer:
    def __init__(self, token: str, log: Optional[Callable[[dict], None]] = None, **options):
        self.scheduler = AsyncioScheduler(asyncio.get_running_loop())
        self.orchestrator = Orchestrator(self.scheduler, token, log=log, **options)
        self.servers: List[asyncio.AbstractServer] = []

    async def _on_worker(self, reader, writer) -> None:
        link = StreamLink(reader, writer)
        self.orchestrator.accept(link)
        await link.pump()

    async def _on_control(self, reader, writer) -> None:
        link = StreamLink(reader, writer)
        buffer: List[ProbeReply] = []
        state: Dict[str, object] = {"run": None}

        def flush() -> None:
            if buffer and state["run"] is not None:
                run: MeasurementRun = state["run"]
                link.send(ResultBatch(run.spec.measurement_id, tuple(buffer)))
                buffer.clear()

        async def flusher() -> None:
            while not link.closed:
                await asyncio.sleep(RESULT_FLUSH_S)
                flush()

        def on_done(run: MeasurementRun) -> None:
            flush()
            link.send(RunSummary(run.spec.measurement_id, run.summary()))
            asyncio.get_running_loop().call_later(0.5, link.close)

        def on_message(msg: Message) -> None:
            if not isinstance(msg, Submit) or state["run"] is not None:
                link.send(Reject("expected a single Submit"))
                link.close()
                return
            try:
                state["run"] = self.orchestrator.submit(msg.spec, msg.targets, buffer.append, on_done)
            except AnycensusError as exc:
                link.send(Reject(str(exc)))
                asyncio.get_running_loop().call_later(0.2, link.close)

        link.on_message = on_message
        task = asyncio.create_task(flusher())
        await link.pump()
        task.cancel()

    async def start(self, listen: str, control: str) -> None:
        host, port = parse_hostport(listen, 7000)
        self.servers.append(await asyncio.start_server(self._on_worker, host, port))
        chost, cport = parse_hostport(control, 7001)
        self.servers.append(await asyncio.start_server(self._on_control, chost, cport))

    @property
    def ports(self) -> List[int]:
        return [s.sockets[0].getsockname()[1] for s in self.servers]

    def close(self) -> None:
        for s in self.servers:
            s.close()


async def serve_orchestrator(listen: str, control: str, token: str, stop: Optional[asyncio.Event] = None) -> None:
    server = OrchestratorServer(token)
    await server.start(listen, control)
    logger.info("orchestrator listening on %s (workers) and %s (control)", listen, control)
    try:
        await (stop.wait() if stop is not None else asyncio.Event().wait())
    finally:
        server.close()


# -- worker ------------------------------------------------------------------

async def run_worker(address: str, vp: VantagePoint, token: str, transport, *,
                     stop: Optional[asyncio.Event] = None, max_attempts: Optional[int] = None) -> Worker:
    """Connect and serve until ``stop`` is set; reconnect on failure with backoff."""
    stop = stop or asyncio.Event()
    scheduler = AsyncioScheduler(asyncio.get_running_loop())
    worker = Worker(vp, scheduler, transport, token)
    host, port = parse_hostport(address, 7000)
    delay = RECONNECT_MIN_S
    attempts = 0
    while not stop.is_set():
        attempts += 1
        try:
            reader, writer = await asyncio.open_connection(host, port)
        except OSError as exc:
            logger.warning("cannot reach orchestrator at %s: %s", address, exc)
        else:
            delay = RECONNECT_MIN_S
            link = StreamLink(reader, writer)
            worker.connect(link)
            pump = asyncio.create_task(link.pump())
            stopper = asyncio.create_task(stop.wait())
            await asyncio.wait({pump, stopper}, return_when=asyncio.FIRST_COMPLETED)
            stopper.cancel()
            if worker.rejected is not None:
                link.close()
                raise ConfigError(f"orchestrator rejected worker: {worker.rejected}")
            if stop.is_set():
                link.close()
                break
            logger.warning("lost orchestrator connection; reconnecting")
        if max_attempts is not None and attempts >= max_attempts:
            break
        try:
            await asyncio.wait_for(stop.wait(), timeout=delay)
        except asyncio.TimeoutError:
            pass
        delay = min(delay * 2, RECONNECT_MAX_S)
    transport.close()
    return worker


# -- control client ----------------------------------------------------------

async def submit_async(control: str, spec: MeasurementSpec, targets: Sequence[TargetAddress],
                       timeout_s: Optional[float] = None) -> Tuple[List[ProbeReply], dict]:
    host, port = parse_hostport(control, 7001)
    try:
        reader, writer = await asyncio.open_connection(host, port)
    except OSError as exc:
        raise AnycensusError(f"cannot reach orchestrator control socket {control}: {exc}") from exc
    link = StreamLink(reader, writer)
    replies: List[ProbeReply] = []
    outcome: Dict[str, object] = {}

    def on_message(msg: Message) -> None:
        if isinstance(msg, ResultBatch):
            replies.extend(msg.replies)
        elif isinstance(msg, RunSummary):
            outcome["summary"] = msg.summary
            link.close()
        elif isinstance(msg, Reject):
            outcome["error"] = msg.reason
            link.close()

    link.on_message = on_message
    link.send(Submit(spec, tuple(targets)))
    await asyncio.wait_for(link.pump(), timeout=timeout_s)
    if "error" in outcome:
        raise AnycensusError(f"orchestrator refused the measurement: {outcome['error']}")
    if "summary" not in outcome:
        raise AnycensusError("control connection closed before the measurement finished")
    return replies, outcome["summary"]


def submit(control: str, spec: MeasurementSpec, targets: Sequence[TargetAddress],
           timeout_s: Optional[float] = None) -> Tuple[List[ProbeReply], dict]:
    return asyncio.run(submit_async(control, spec, targets, timeout_s))


class RemoteBackend:
    """Pipeline backend that drives a running orchestrator over its control socket."""

    def __init__(self, control: str, roster: Dict[int, VantagePoint]):
        self.control = control
        self._roster = dict(roster)

    def roster(self) -> Dict[int, VantagePoint]:
        return dict(self._roster)

    def measure(self, spec, targets):
        from .pipeline import MeasurementOutcome

        replies, summary = submit(self.control, spec, targets)
        return MeasurementOutcome(replies, summary)


# -- simulator over a unix socket ---------------------------------------------

_LEN = struct.Struct("!I")


def _pack(obj: dict) -> bytes:
    body = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return _LEN.pack(len(body)) + body


async def _read_obj(reader: asyncio.StreamReader) -> Optional[dict]:
    try:
        head = await reader.readexactly(_LEN.size)
        (n,) = _LEN.unpack(head)
        return json.loads(await reader.readexactly(n))
    except (asyncio.IncompleteReadError, ConnectionError):
        return None


class SimSocketServer:
    """Serves a :class:`SimWorld` in wall-clock time to worker processes.

    A worker registers with ``{"worker": id}``; each probe it sends is
    delivered through the world and the reply is pushed, at its simulated
    arrival time, to whichever worker the world routes it to.
    """

    def __init__(self, world):
        self.world = world
        self.writers: Dict[int, asyncio.StreamWriter] = {}
        self.server: Optional[asyncio.AbstractServer] = None
        self.delivered = 0

    def _now_us(self) -> int:
        return time.time_ns() // 1000

    async def _on_client(self, reader, writer) -> None:
        hello = await _read_obj(reader)
        if not hello or "worker" not in hello or int(hello["worker"]) not in self.world.vp_by_id:
            writer.close()
            return
        wid = int(hello["worker"])
        self.writers[wid] = writer
        loop = asyncio.get_running_loop()
        while True:
            obj = await _read_obj(reader)
            if obj is None:
                break
            target = TargetAddress(ip(obj["target"]), Prefix.parse(obj["prefix"]))
            probe = EncodedProbe(Protocol(obj["protocol"]), base64.b64decode(obj["wire"]), target, wid,
                                 int(obj["tx"]))
            source = ip(obj["source"])
            vp = self.world.vp_by_id[wid]
            mode = SourceMode.ANYCAST if source in (vp.anycast_address, vp.anycast_address6) else SourceMode.UNICAST
            now = self._now_us()
            d = self.world.deliver(probe, wid, now, mode, source)
            if d is not None:
                loop.call_later(max(0.0, (d.rx_time_us - now) / 1e6), self._push, d)
        if self.writers.get(wid) is writer:
            del self.writers[wid]

    def _push(self, d) -> None:
        w = self.writers.get(d.rx_worker)
        if w is None or w.is_closing():
            return
        self.delivered += 1
        w.write(_pack({"payload": base64.b64encode(d.payload).decode(), "source": str(d.source),
                       "rx": d.rx_time_us}))

    async def start(self, path: str) -> None:
        self.server = await asyncio.start_unix_server(self._on_client, path)

    def close(self) -> None:
        if self.server is not None:
            self.server.close()


class SimSocketTransport:
    """Worker-side :class:`~anycensus.worker.ProbeTransport` for :class:`SimSocketServer`."""

    def __init__(self, worker_id: int):
        self.worker_id = worker_id
        self.receiver = None
        self.writer: Optional[asyncio.StreamWriter] = None
        self._task: Optional[asyncio.Task] = None

    async def open(self, path: str) -> None:
        try:
            reader, self.writer = await asyncio.open_unix_connection(path)
        except OSError as exc:
            raise ConfigError(f"cannot open simulator socket {path}: {exc}") from exc
        self.writer.write(_pack({"worker": self.worker_id}))
        self._task = asyncio.create_task(self._read(reader))

    async def _read(self, reader) -> None:
        while True:
            obj = await _read_obj(reader)
            if obj is None:
                return
            if self.receiver is not None:
                self.receiver(base64.b64decode(obj["payload"]), ip(obj["source"]), int(obj["rx"]))

    def set_receiver(self, fn) -> None:
        self.receiver = fn

    def send(self, probe: EncodedProbe, source: IPAddress) -> None:
        if self.writer is None or self.writer.is_closing():
            raise OSError("simulator socket is closed")
        self.writer.write(_pack({"protocol": probe.protocol.value, "wire": base64.b64encode(probe.wire_bytes).decode(),
                                 "target": str(probe.target.address), "prefix": str(probe.target.prefix),
                                 "tx": probe.tx_time_us, "source": str(source)}))

    def close(self) -> None:
        if self._task is not None:
            self._task.cancel()
        if self.writer is not None:
            self.writer.close()
