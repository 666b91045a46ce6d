"""Orchestrator <-> worker control protocol.

Each message travels as one frame: a 4 byte big-endian body length followed
by a canonical JSON object (sorted keys, no whitespace) with a ``"type"`` tag
and a per-session ``"seq"``. See ``docs/wire-control.md``.
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Callable, Dict, Optional

from .domain import MeasurementSpec, Prefix, ProbeReply, TargetAddress, ip
from .errors import AuthError, FrameDecodeError, FrameTooLarge

PROTOCOL_VERSION = 1
MAX_FRAME = 16 * 1024 * 1024
LENGTH = struct.Struct("!I")


@dataclass(frozen=True)
class Message:
    seq: int = field(default=0, kw_only=True)


@dataclass(frozen=True)
class Hello(Message):
    worker_id: int
    auth_token: str
    capabilities: tuple = ()
    protocol_version: int = PROTOCOL_VERSION
    vp: Optional[dict] = None


@dataclass(frozen=True)
class Welcome(Message):
    worker_id: int
    epoch: int


@dataclass(frozen=True)
class Reject(Message):
    reason: str


@dataclass(frozen=True)
class StartMeasurement(Message):
    spec: MeasurementSpec


@dataclass(frozen=True)
class TargetBatch(Message):
    measurement_id: int
    entries: tuple  # ((TargetAddress, fire_at_us), ...)

    def __post_init__(self):
        times = [t for _, t in self.entries]
        if times != sorted(times):
            raise ValueError("TargetBatch entries must be sorted by fire time")


@dataclass(frozen=True)
class ResultBatch(Message):
    measurement_id: int
    replies: tuple


@dataclass(frozen=True)
class EndMeasurement(Message):
    measurement_id: int


@dataclass(frozen=True)
class Heartbeat(Message):
    sent_at_us: int
    echo_us: Optional[int] = None


@dataclass(frozen=True)
class Ack(Message):
    ack_seq: int


@dataclass(frozen=True)
class Submit(Message):
    """CLI -> orchestrator: run one measurement over ``targets``."""

    spec: MeasurementSpec
    targets: tuple


@dataclass(frozen=True)
class RunSummary(Message):
    measurement_id: int
    summary: dict


MESSAGE_TYPES = {cls.__name__: cls for cls in (
    Hello, Welcome, Reject, StartMeasurement, TargetBatch, ResultBatch,
    EndMeasurement, Heartbeat, Ack, Submit, RunSummary,
)}


def _target_to_json(t: TargetAddress) -> list:
    return [str(t.address), str(t.prefix)]


def _target_from_json(v) -> TargetAddress:
    return TargetAddress(ip(v[0]), Prefix.parse(v[1]))


def _encode_body(msg: Message) -> dict:
    body = {"type": type(msg).__name__, "seq": msg.seq}
    if isinstance(msg, (StartMeasurement, Submit)):
        body["spec"] = msg.spec.to_dict()
        if isinstance(msg, Submit):
            body["targets"] = [_target_to_json(t) for t in msg.targets]
    elif isinstance(msg, TargetBatch):
        body["measurement_id"] = msg.measurement_id
        body["entries"] = [_target_to_json(t) + [at] for t, at in msg.entries]
    elif isinstance(msg, ResultBatch):
        body["measurement_id"] = msg.measurement_id
        body["replies"] = [r.to_dict() for r in msg.replies]
    else:
        for f in fields(msg):
            if f.name != "seq":
                value = getattr(msg, f.name)
                body[f.name] = list(value) if isinstance(value, tuple) else value
    return body


def _decode_body(body: dict) -> Message:
    cls = MESSAGE_TYPES[body["type"]]
    seq = body["seq"]
    if not isinstance(seq, int) or seq < 0:
        raise ValueError("bad seq")
    if cls is StartMeasurement:
        return StartMeasurement(MeasurementSpec.from_dict(body["spec"]), seq=seq)
    if cls is Submit:
        return Submit(MeasurementSpec.from_dict(body["spec"]),
                      tuple(_target_from_json(t) for t in body["targets"]), seq=seq)
    if cls is TargetBatch:
        entries = tuple((_target_from_json(e[:2]), int(e[2])) for e in body["entries"])
        return TargetBatch(int(body["measurement_id"]), entries, seq=seq)
    if cls is ResultBatch:
        replies = tuple(ProbeReply.from_dict(r) for r in body["replies"])
        return ResultBatch(int(body["measurement_id"]), replies, seq=seq)
    kwargs = {}
    for f in fields(cls):
        if f.name == "seq":
            continue
        if f.name in body:
            value = body[f.name]
            kwargs[f.name] = tuple(value) if isinstance(value, list) else value
    msg = cls(**kwargs, seq=seq)
    _check_scalars(msg)
    return msg


def _check_scalars(msg: Message) -> None:
    if isinstance(msg, Hello):
        if not isinstance(msg.worker_id, int) or not isinstance(msg.auth_token, str):
            raise ValueError("bad Hello")
        if msg.vp is not None and not isinstance(msg.vp, dict):
            raise ValueError("bad Hello.vp")
    elif isinstance(msg, Heartbeat):
        if not isinstance(msg.sent_at_us, int) or not (msg.echo_us is None or isinstance(msg.echo_us, int)):
            raise ValueError("bad Heartbeat")
    elif isinstance(msg, (Ack, EndMeasurement, Welcome)):
        for f in fields(msg):
            if not isinstance(getattr(msg, f.name), int):
                raise ValueError(f"bad {type(msg).__name__}")
    elif isinstance(msg, RunSummary) and not isinstance(msg.summary, dict):
        raise ValueError("bad RunSummary")


def frame(message: Message) -> bytes:
    body = json.dumps(_encode_body(message), sort_keys=True, separators=(",", ":")).encode()
    if len(body) > MAX_FRAME:
        raise FrameTooLarge(f"frame body of {len(body)} bytes exceeds {MAX_FRAME}")
    return LENGTH.pack(len(body)) + body


def decode_body(body: bytes) -> Message:
    try:
        obj = json.loads(body.decode("utf-8"))
        if not isinstance(obj, dict):
            raise ValueError("frame body is not an object")
        return _decode_body(obj)
    except FrameDecodeError:
        raise
    except Exception as exc:  # any malformed body closes the session
        raise FrameDecodeError(f"malformed frame body: {exc}") from None


def unframe(data: bytes) -> Message:
    if len(data) < LENGTH.size:
        raise FrameDecodeError("short frame")
    (length,) = LENGTH.unpack_from(data)
    if length > MAX_FRAME:
        raise FrameTooLarge(f"declared frame length {length} exceeds {MAX_FRAME}")
    if len(data) != LENGTH.size + length:
        raise FrameDecodeError("frame length does not match payload")
    return decode_body(data[LENGTH.size:])


class FrameDecoder:
    """Incremental decoder for a byte stream of frames."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list:
        self._buf += chunk
        out = []
        while len(self._buf) >= LENGTH.size:
            (length,) = LENGTH.unpack_from(self._buf)
            if length > MAX_FRAME:
                raise FrameTooLarge(f"declared frame length {length} exceeds {MAX_FRAME}")
            if len(self._buf) < LENGTH.size + length:
                break
            body = bytes(self._buf[LENGTH.size:LENGTH.size + length])
            del self._buf[:LENGTH.size + length]
            out.append(decode_body(body))
        return out


class FramedLink:
    """One end of a session. Assigns sequence numbers and frames outgoing messages.

    Subclasses implement ``_write``; ``on_message`` and ``on_close`` are set by
    whoever owns the receiving side.
    """

    def __init__(self):
        self._seq = 0
        self._lock = threading.Lock()
        self.on_message: Optional[Callable[[Message], None]] = None
        self.on_close: Optional[Callable[[], None]] = None
        self.closed = False

    def send(self, msg: Message) -> int:
        with self._lock:
            self._seq += 1
            seq = self._seq
        if not self.closed:
            self._write(frame(replace(msg, seq=seq)))
        return seq

    def _write(self, data: bytes) -> None:
        raise NotImplementedError

    def close(self) -> None:
        self.closed = True


class SessionState(str, Enum):
    CONNECTED = "connected"
    MEASURING = "measuring"
    DISCONNECTED = "disconnected"


_TRANSITIONS = {
    SessionState.CONNECTED: {SessionState.MEASURING, SessionState.DISCONNECTED, SessionState.CONNECTED},
    SessionState.MEASURING: {SessionState.CONNECTED, SessionState.DISCONNECTED, SessionState.MEASURING},
    SessionState.DISCONNECTED: {SessionState.DISCONNECTED},
}


@dataclass
class Session:
    worker_id: int
    state: SessionState
    last_heartbeat_us: int
    outstanding_targets: int = 0
    epoch: int = 0
    link: Optional[FramedLink] = None
    skew_us: int = 0
    skew_flagged: bool = False

    def transition(self, new: SessionState) -> None:
        if new not in _TRANSITIONS[self.state]:
            raise ValueError(f"illegal session transition {self.state.value} -> {new.value}")
        self.state = new

    @property
    def live(self) -> bool:
        return self.state is not SessionState.DISCONNECTED


class SessionRegistry:
    """worker_id -> Session, safe for concurrent access."""

    def __init__(self):
        self._sessions: Dict[int, Session] = {}
        self._lock = threading.Lock()
        self._epoch = 0

    def get(self, worker_id: int) -> Optional[Session]:
        with self._lock:
            return self._sessions.get(worker_id)

    def live(self) -> list:
        with self._lock:
            return sorted((s for s in self._sessions.values() if s.live), key=lambda s: s.worker_id)

    def next_epoch(self) -> int:
        with self._lock:
            self._epoch += 1
            return self._epoch

    def put(self, session: Session) -> Optional[Session]:
        with self._lock:
            old = self._sessions.get(session.worker_id)
            self._sessions[session.worker_id] = session
            return old

    def remove(self, worker_id: int) -> Optional[Session]:
        with self._lock:
            return self._sessions.pop(worker_id, None)


def handshake(registry: SessionRegistry, hello: Hello, token: str, now_us: int,
              link: Optional[FramedLink] = None, active_spec: Optional[MeasurementSpec] = None):
    """Admit a worker. Returns ``(session, replay, replaced)``.

    ``replay`` is the StartMeasurement to resend when the worker belongs to
    the active measurement; ``replaced`` is a previous live session that was
    superseded and must be closed by the caller.
    """
    if hello.protocol_version != PROTOCOL_VERSION:
        raise AuthError(f"unsupported protocol version {hello.protocol_version}")
    if hello.auth_token != token:
        raise AuthError(f"worker {hello.worker_id}: bad token")
    if not isinstance(hello.worker_id, int) or not 0 < hello.worker_id <= 0xFFFF:
        raise AuthError(f"invalid worker id {hello.worker_id!r}")
    old = registry.get(hello.worker_id)
    replaced = old if old is not None and old.live else None
    in_run = active_spec is not None and hello.worker_id in active_spec.workers
    if replaced is not None and replaced.state is SessionState.MEASURING:
        # resume: same epoch, new link
        session = Session(hello.worker_id, SessionState.MEASURING, now_us,
                          replaced.outstanding_targets, replaced.epoch, link)
    else:
        session = Session(hello.worker_id, SessionState.CONNECTED, now_us,
                          epoch=registry.next_epoch(), link=link)
        if in_run:
            session.transition(SessionState.MEASURING)
    registry.put(session)
    replay = StartMeasurement(active_spec) if in_run else None
    return session, replay, replaced
