"""Time sources. Orchestrator and worker logic only talk to a :class:`Scheduler`.

The simulator drives them with a virtual clock (:class:`anycensus.netsim.EventLoop`);
live deployments use :class:`AsyncioScheduler` on wall-clock time.
"""

from __future__ import annotations

import asyncio
import time
from typing import Any, Callable, Optional, Protocol


class Timer(Protocol):
    def cancel(self) -> None: ...


class Scheduler(Protocol):
    def now_us(self) -> int: ...

    def call_at(self, t_us: int, fn: Callable[..., Any], *args: Any) -> Timer: ...


def every(scheduler: Scheduler, period_us: int, fn: Callable[[], Any], start_us: Optional[int] = None):
    """Call ``fn`` every ``period_us`` until it returns False. Returns a cancel handle."""
    state = {"timer": None, "cancelled": False}

    def tick(at):
        if state["cancelled"]:
            return
        if fn() is False:
            return
        state["timer"] = scheduler.call_at(at + period_us, tick, at + period_us)

    first = scheduler.now_us() + period_us if start_us is None else start_us
    state["timer"] = scheduler.call_at(first, tick, first)

    class _Handle:
        def cancel(self):
            state["cancelled"] = True
            if state["timer"] is not None:
                state["timer"].cancel()

    return _Handle()


class AsyncioScheduler:
    """Wall-clock scheduler on a running asyncio loop (microseconds since epoch)."""

    def __init__(self, loop: Optional[asyncio.AbstractEventLoop] = None):
        self.loop = loop or asyncio.get_event_loop()

    def now_us(self) -> int:
        return time.time_ns() // 1000

    def call_at(self, t_us: int, fn, *args):
        delay = max(0.0, (t_us - self.now_us()) / 1e6)
        return self.loop.call_later(delay, fn, *args)
