"""Central measurement controller.

The orchestrator owns the hitlist. For every target it computes a base fire
time paced at the measurement rate, and gives worker ``k`` (position in
``spec.workers``) the fire time ``base + k * offset``. Targets are streamed to
each worker shortly before they are due, results are merged and deduplicated
into one sink, and workers that stop answering heartbeats are dropped while
the run continues with the survivors.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .clock import Scheduler, every
from .domain import MeasurementSpec, ProbeReply, TargetAddress, VantagePoint
from .errors import AuthError, ConfigError, NoWorkersError
from .wire import (
    Ack, EndMeasurement, FramedLink, Heartbeat, Hello, Message, Reject, ResultBatch,
    SessionRegistry, SessionState, StartMeasurement, TargetBatch, Welcome, handshake,
)

logger = logging.getLogger("anycensus.orchestrator")

HEARTBEAT_US = 5_000_000
MISSED_HEARTBEATS = 3
DRAIN_US = 10_000_000
LEAD_US = 1_000_000
TICK_US = 100_000
STALE_US = 1_000_000
SKEW_LIMIT_US = 500_000


class TokenBucket:
    """Token bucket in virtual-scheduling (GCRA) form on integer microseconds.

    One token accrues every ``interval_us = ceil(1e6 / rate)``; at most
    ``burst`` tokens are held. :meth:`next_slot` returns the earliest time at
    or after ``now`` when a token is available and consumes it.
    """

    def __init__(self, rate_pps: float, burst: int = 1):
        if not rate_pps > 0:
            raise ConfigError(f"rate must be > 0 pps, got {rate_pps}")
        if burst < 1 or burst > max(1, int(rate_pps)):
            raise ConfigError("burst must be between 1 token and one second of tokens")
        self.interval_us = math.ceil(1e6 / rate_pps)
        self.tolerance_us = (burst - 1) * self.interval_us
        self._tat: Optional[int] = None

    def next_slot(self, now_us: int) -> int:
        tat = now_us if self._tat is None else self._tat
        slot = max(now_us, tat - self.tolerance_us)
        self._tat = max(slot, tat) + self.interval_us
        return slot


def throttle(hitlist: Iterable, rate_pps: float, start_us: int = 0, burst: int = 1) -> Iterator[Tuple[object, int]]:
    """Pair each hitlist entry with its emission time under a token bucket."""
    bucket = TokenBucket(rate_pps, burst)
    for item in hitlist:
        yield item, bucket.next_slot(start_us)


@dataclass(frozen=True)
class Schedule:
    base_times: tuple
    offset_us: int
    workers: tuple

    @classmethod
    def build(cls, spec: MeasurementSpec, n_targets: int, start_us: int) -> "Schedule":
        times = tuple(t for _, t in throttle(range(n_targets), spec.rate_pps, start_us))
        return cls(times, spec.offset_us, spec.workers)

    def fire_time(self, index: int, worker_pos: int) -> int:
        return self.base_times[index] + worker_pos * self.offset_us

    @property
    def span_us(self) -> int:
        return (len(self.workers) - 1) * self.offset_us

    @property
    def last_fire_us(self) -> int:
        return (self.base_times[-1] if self.base_times else 0) + self.span_us


class RunState(str, Enum):
    RUNNING = "running"
    DRAINING = "draining"
    DONE = "done"


@dataclass
class MeasurementRun:
    spec: MeasurementSpec
    targets: Sequence[TargetAddress]
    schedule: Schedule
    start_us: int
    end_us: int
    state: RunState = RunState.RUNNING
    active_workers: set = field(default_factory=set)
    cursors: Dict[int, int] = field(default_factory=dict)
    targets_sent: Counter = field(default_factory=Counter)
    results_received: Counter = field(default_factory=Counter)
    stale_skipped: Counter = field(default_factory=Counter)
    duplicates: int = 0
    late_results: int = 0
    dead_workers: List[int] = field(default_factory=list)
    readmitted_workers: List[int] = field(default_factory=list)
    seen: set = field(default_factory=set)

    def summary(self) -> dict:
        per_worker = {}
        n = len(self.targets)
        for w in self.spec.workers:
            per_worker[str(w)] = {
                "sent": self.targets_sent[w],
                "received": self.results_received[w],
                "stale_skipped": self.stale_skipped[w],
                "coverage": (self.targets_sent[w] / n) if n else 1.0,
            }
        return {
            "measurement_id": self.spec.measurement_id,
            "state": self.state.value,
            "targets": n,
            "results": sum(self.results_received.values()),
            "duplicates": self.duplicates,
            "late_results": self.late_results,
            "dead_workers": list(self.dead_workers),
            "readmitted_workers": list(self.readmitted_workers),
            "start_us": self.start_us,
            "end_us": self.end_us,
            "workers": per_worker,
        }


def _default_log(event: dict) -> None:
    logger.info(json.dumps(event, sort_keys=True))


class Orchestrator:
    def __init__(self, scheduler: Scheduler, token: str, *,
                 heartbeat_us: int = HEARTBEAT_US, missed_heartbeats: int = MISSED_HEARTBEATS,
                 drain_us: int = DRAIN_US, lead_us: int = LEAD_US, tick_us: int = TICK_US,
                 stale_us: int = STALE_US, skew_limit_us: int = SKEW_LIMIT_US,
                 log: Optional[Callable[[dict], None]] = None):
        self.scheduler = scheduler
        self.token = token
        self.heartbeat_us = heartbeat_us
        self.dead_after_us = heartbeat_us * missed_heartbeats
        self.drain_us = drain_us
        self.lead_us = lead_us
        self.tick_us = tick_us
        self.stale_us = stale_us
        self.skew_limit_us = skew_limit_us
        self.log = log or _default_log
        self.registry = SessionRegistry()
        self.roster: Dict[int, VantagePoint] = {}
        self.run: Optional[MeasurementRun] = None
        self._sink: Optional[Callable[[ProbeReply], None]] = None
        self._on_done: Optional[Callable[[MeasurementRun], None]] = None
        self._tick_handle = None
        self._timers_started = False

    # -- sessions -------------------------------------------------------------

    def _ensure_timers(self) -> None:
        if not self._timers_started:
            self._timers_started = True
            every(self.scheduler, self.heartbeat_us, self._heartbeat_all)
            every(self.scheduler, 1_000_000, self._check_liveness)

    def accept(self, link: FramedLink) -> None:
        """Take ownership of a new transport-level connection."""
        self._ensure_timers()
        state = {"worker": None}

        def on_message(msg: Message) -> None:
            if state["worker"] is None:
                if not isinstance(msg, Hello):
                    link.send(Reject("expected Hello"))
                    link.close()
                    return
                state["worker"] = self._on_hello(link, msg)
                return
            self._on_worker_message(state["worker"], link, msg)

        link.on_message = on_message

    def _on_hello(self, link: FramedLink, hello: Hello) -> Optional[int]:
        now = self.scheduler.now_us()
        active = self.run.spec if self.run is not None and self.run.state is not RunState.DONE else None
        try:
            session, replay, replaced = handshake(self.registry, hello, self.token, now, link, active)
        except AuthError as exc:
            self.log({"event": "worker_rejected", "worker": hello.worker_id, "reason": str(exc)})
            link.send(Reject(str(exc)))
            link.close()
            return None
        if replaced is not None and replaced.link is not None and replaced.link is not link:
            replaced.link.close()
        if hello.vp:
            try:
                self.roster[hello.worker_id] = VantagePoint.from_dict({**hello.vp, "worker_id": hello.worker_id})
            except (KeyError, ValueError, ConfigError):
                pass
        link.send(Welcome(hello.worker_id, session.epoch))
        resumed = replaced is not None and replaced.state is SessionState.MEASURING
        self.log({"event": "worker_resumed" if resumed else "worker_connected",
                  "worker": hello.worker_id, "epoch": session.epoch})
        if replay is not None:
            link.send(replay)
            run = self.run
            if hello.worker_id not in run.active_workers:
                run.active_workers.add(hello.worker_id)
                run.readmitted_workers.append(hello.worker_id)
                self.log({"event": "worker_readmitted", "worker": hello.worker_id,
                          "measurement_id": run.spec.measurement_id})
                if run.state is RunState.DRAINING and run.cursors[hello.worker_id] < len(run.targets):
                    run.state = RunState.RUNNING
                    self._tick_handle = every(self.scheduler, self.tick_us, self._dispatch, start_us=now)
        return hello.worker_id

    def _current_session(self, worker_id: int, link: FramedLink):
        session = self.registry.get(worker_id)
        if session is None or session.link is not link or not session.live:
            return None
        return session

    def _on_worker_message(self, worker_id: int, link: FramedLink, msg: Message) -> None:
        session = self._current_session(worker_id, link)
        if session is None:
            return
        now = self.scheduler.now_us()
        session.last_heartbeat_us = now
        if isinstance(msg, Heartbeat) and msg.echo_us is not None:
            midpoint = (msg.echo_us + now) // 2
            session.skew_us = msg.sent_at_us - midpoint
            flagged = abs(session.skew_us) > self.skew_limit_us
            if flagged and not session.skew_flagged:
                self.log({"event": "clock_skew", "worker": worker_id, "skew_us": session.skew_us})
            session.skew_flagged = flagged
        elif isinstance(msg, ResultBatch):
            self._aggregate(msg)
            link.send(Ack(msg.seq))

    def _heartbeat_all(self) -> None:
        now = self.scheduler.now_us()
        for session in self.registry.live():
            if session.link is not None:
                session.link.send(Heartbeat(now))

    def _check_liveness(self) -> None:
        now = self.scheduler.now_us()
        for session in self.registry.live():
            if now - session.last_heartbeat_us > self.dead_after_us:
                session.transition(SessionState.DISCONNECTED)
                if session.link is not None:
                    session.link.close()
                self.log({"event": "worker_dead", "worker": session.worker_id, "at_us": now})
                run = self.run
                if run is not None and run.state is not RunState.DONE and session.worker_id in run.active_workers:
                    run.active_workers.discard(session.worker_id)
                    run.dead_workers.append(session.worker_id)

    # -- measurements ---------------------------------------------------------

    def connected_workers(self) -> List[int]:
        return [s.worker_id for s in self.registry.live()]

    def submit(self, spec: MeasurementSpec, hitlist: Iterable[TargetAddress],
               sink: Callable[[ProbeReply], None],
               on_done: Optional[Callable[[MeasurementRun], None]] = None) -> MeasurementRun:
        if self.run is not None and self.run.state is not RunState.DONE:
            raise ConfigError("a measurement is already running")
        live = set(self.connected_workers())
        active = [w for w in spec.workers if w in live]
        if not active:
            raise NoWorkersError(f"none of workers {list(spec.workers)} is connected")
        targets = list(hitlist)
        now = self.scheduler.now_us()
        schedule = Schedule.build(spec, len(targets), now + self.lead_us)
        end = max(schedule.last_fire_us, now) + self.drain_us
        run = MeasurementRun(spec, targets, schedule, now, end, active_workers=set(active),
                             cursors={w: 0 for w in spec.workers})
        self.run, self._sink, self._on_done = run, sink, on_done
        for w in active:
            session = self.registry.get(w)
            session.transition(SessionState.MEASURING)
            session.link.send(StartMeasurement(spec))
        self.log({"event": "measurement_started", "measurement_id": spec.measurement_id,
                  "protocol": spec.protocol.value, "targets": len(targets), "workers": active})
        self._ensure_timers()
        self._tick_handle = every(self.scheduler, self.tick_us, self._dispatch, start_us=now)
        self.scheduler.call_at(end, self._finish, run)
        return run

    def _dispatch(self):
        run = self.run
        if run is None or run.state is not RunState.RUNNING:
            return False
        now = self.scheduler.now_us()
        window_end = now + self.lead_us
        n = len(run.targets)
        for pos, w in enumerate(run.spec.workers):
            if w not in run.active_workers:
                continue
            session = self.registry.get(w)
            if session is None or not session.live or session.link is None:
                continue
            i = run.cursors[w]
            entries = []
            while i < n:
                at = run.schedule.fire_time(i, pos)
                if at >= window_end:
                    break
                if at < now - self.stale_us:
                    run.stale_skipped[w] += 1
                else:
                    entries.append((run.targets[i], at))
                i += 1
            run.cursors[w] = i
            if entries:
                session.outstanding_targets += len(entries)
                run.targets_sent[w] += len(entries)
                session.link.send(TargetBatch(run.spec.measurement_id, tuple(entries)))
        if all(run.cursors[w] >= n for w in run.active_workers):
            run.state = RunState.DRAINING
            self.log({"event": "measurement_draining", "measurement_id": run.spec.measurement_id})
            return False
        return True

    def _aggregate(self, batch: ResultBatch) -> None:
        run = self.run
        if run is None or run.state is RunState.DONE or batch.measurement_id != run.spec.measurement_id:
            if run is not None:
                run.late_results += len(batch.replies)
            return
        for reply in batch.replies:
            key = reply.dedup_key()
            if key in run.seen:
                run.duplicates += 1
                continue
            run.seen.add(key)
            run.results_received[reply.rx_worker] += 1
            self._sink(reply)

    def _finish(self, run: MeasurementRun) -> None:
        if run is not self.run or run.state is RunState.DONE:
            return
        run.state = RunState.DONE
        if self._tick_handle is not None:
            self._tick_handle.cancel()
        for session in self.registry.live():
            if session.state is SessionState.MEASURING:
                session.transition(SessionState.CONNECTED)
                session.outstanding_targets = 0
                if session.link is not None:
                    session.link.send(EndMeasurement(run.spec.measurement_id))
        run.seen = set()
        self.log({"event": "measurement_done", "measurement_id": run.spec.measurement_id,
                  "results": sum(run.results_received.values()), "dead_workers": run.dead_workers})
        if self._on_done is not None:
            self._on_done(run)
