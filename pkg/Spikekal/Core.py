from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Literal

from greenlet import greenlet

from Spikekal.Utils import UniquePriorityQueue, ClassProperty, UniqueDeque


logger = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class StepTime:
    """
    Simulation clock: `step` counts filter iterations, `delta` orders the
    zero-time hand-offs inside one step (publish → consume → record).
    """
    step: int = 0
    delta: int = 0

    def __post_init__(self):
        if not isinstance(self.step, int) or not isinstance(self.delta, int):
            raise TypeError("StepTime fields must be int")

    def __add__(self, other):
        if not isinstance(other, StepTime):
            return NotImplemented
        if other.step == 0:
            # 同一个 step 内只推进 delta
            return StepTime(self.step, self.delta + max(other.delta, 1))
        return StepTime(self.step + other.step, 0)

    def __repr__(self):
        return f"StepTime(step={self.step}, delta={self.delta})"


class SimCoroutine(greenlet):
    def __init__(self, func: Callable, name: str = ''):
        super().__init__(func)
        self.name = name or getattr(func, '__qualname__', 'coroutine')
        self.status: Literal['created', 'registered'] = 'created'

    def register(self):
        self.status = 'registered'

    def is_registered(self) -> bool:
        return self.status == 'registered'


class SimModule:
    def __init__(self):
        self._coroutines: list[SimCoroutine] = []
        SimSession.sim_modules.append(self)

    def register_coroutine(self, func: Callable, *events: Event):
        coroutine = SimCoroutine(func, f"{type(self).__name__}.{getattr(func, '__name__', 'process')}")
        self._coroutines.append(coroutine)
        for event in events:
            event.add_static_waiting_coroutine(coroutine)
        SimSession.scheduler.add_coroutine(coroutine)
        return coroutine

    @staticmethod
    def wait(*events: Event):
        current = greenlet.getcurrent()
        for event in events:
            assert isinstance(event, Event)
            event.add_waiting_coroutine(current)

        # 切换回 scheduler, 任意一个 event 触发后回到这里
        SimSession.scheduler.executor_coroutine.switch()

        for event in events:
            event.remove_waiting_coroutine(current)

    @staticmethod
    def wait_time(delay: StepTime):
        event = Event()
        event.notify(delay)
        SimModule.wait(event)


class Event:
    _ids = itertools.count()

    def __init__(self):
        self._notify_time: Optional[StepTime] = None
        # creation order breaks ties deterministically (never id())
        self.seq = next(Event._ids)

        self.static_waiting_coroutines: list[SimCoroutine] = []
        self.waiting_coroutines: list[greenlet] = []

    @property
    def notify_time(self) -> Optional[StepTime]:
        return self._notify_time

    def notify(self, delay: StepTime = StepTime(0, 1)):
        SimSession.scheduler.notify_event(self, SimSession.sim_time + delay)

    def set_notify_time(self, notify_time: Optional[StepTime]):
        self._notify_time = notify_time

    def add_static_waiting_coroutine(self, *coroutines: SimCoroutine):
        for coroutine in coroutines:
            if coroutine not in self.static_waiting_coroutines:
                self.static_waiting_coroutines.append(coroutine)

    def add_waiting_coroutine(self, *coroutines: greenlet):
        for coroutine in coroutines:
            if coroutine not in self.waiting_coroutines:
                self.waiting_coroutines.append(coroutine)

    def remove_waiting_coroutine(self, *coroutines: greenlet):
        for coroutine in coroutines:
            if coroutine in self.waiting_coroutines:
                self.waiting_coroutines.remove(coroutine)

    def get_waiting_coroutines(self) -> list[greenlet]:
        waiting = list(self.static_waiting_coroutines)
        waiting.extend(c for c in self.waiting_coroutines if c not in waiting)
        return waiting

    def clear_waiting_coroutine(self):
        self.waiting_coroutines = []

    def __hash__(self):
        return self.seq

    def __eq__(self, other):
        return self is other

    def __repr__(self):
        return f"Event(seq={self.seq}, notify_time={self._notify_time})"


def _event_key(event: Event):
    return event.notify_time, event.seq


class Scheduler:
    def __init__(self):
        self.runnable_queue: UniqueDeque[greenlet] = UniqueDeque()
        self.event_queue: UniquePriorityQueue[Event] = UniquePriorityQueue(key=_event_key)

        self.sim_time: StepTime = StepTime(0, 0)

        self.executor_coroutine: Optional[greenlet] = None
        self.main_loop_coroutine = greenlet(self.main_loop)

        self.status: Literal['initialized', 'running', 'finished'] = 'initialized'

    def run(self):
        self.main_loop_coroutine.switch()
        self.status = 'finished'

    def main_loop(self):
        self.status = 'running'
        self.executor_coroutine = greenlet.getcurrent()

        while True:
            # evaluate: 依次执行当前时刻所有可运行的 coroutine
            while self.runnable_queue:
                coroutine = self.runnable_queue.popleft()
                if coroutine.dead:
                    continue
                coroutine.switch()

            # update: 推进到下一个 event 的时间
            if not self.event_queue:
                break
            next_time = self.event_queue.peek().notify_time
            assert next_time > self.sim_time, f"time went backwards: {next_time} <= {self.sim_time}"
            self.sim_time = next_time
            self.handle_notified_events(next_time)

        logger.debug("scheduler idle at %s", self.sim_time)

    def handle_notified_events(self, time: StepTime):
        while self.event_queue and self.event_queue.peek().notify_time == time:
            notified_event = self.event_queue.pop()
            for coroutine in notified_event.get_waiting_coroutines():
                self.runnable_queue.append(coroutine)
            notified_event.clear_waiting_coroutine()

    def notify_event(self, event: Event, notify_time: StepTime):
        # 已经在队列中的 event 需要先删除再以新的时间插入
        if event in self.event_queue:
            self.event_queue.remove(event)
        event.set_notify_time(notify_time)
        self.event_queue.add(event)

    def add_coroutine(self, coroutine: SimCoroutine):
        if coroutine.is_registered():
            return
        coroutine.register()
        coroutine.parent = self.main_loop_coroutine
        self.runnable_queue.append(coroutine)


class SimSession:
    scheduler: Optional[Scheduler] = None
    sim_modules: list[SimModule] = []

    @ClassProperty
    def sim_time(cls) -> StepTime:
        return cls.scheduler.sim_time

    @classmethod
    def reset(cls):
        cls.scheduler = None
        cls.sim_modules = []

    @classmethod
    def init(cls):
        cls.scheduler = Scheduler()
        cls.sim_modules = []
