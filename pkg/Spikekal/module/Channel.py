from typing import TypeVar, Generic, Deque
from collections import deque

from Spikekal.Core import Event, SimModule


T = TypeVar('T')


class Channel(Generic[T]):
    """
    Unbounded single-reader queue between coroutines.

    `read` parks the calling coroutine until data is written; writers never
    block, so a reader that stops early cannot stall the source.
    """

    def __init__(self, name: str = ''):
        self.name = name
        self.data: Deque[T] = deque()
        self.data_event = Event()
        self.total_written: int = 0

    def read(self) -> T:
        while not self.data:
            SimModule.wait(self.data_event)
        return self.data.popleft()

    def write(self, item: T):
        self.data.append(item)
        self.total_written += 1
        self.data_event.notify()

    def is_empty(self) -> bool:
        return not self.data

    def __len__(self) -> int:
        return len(self.data)


class Broadcast(Generic[T]):
    # 一个写端, 多个读端; 每个订阅者拿到同一个对象序列
    def __init__(self):
        self.subscribers: dict[str, Channel[T]] = {}

    def subscribe(self, name: str) -> Channel[T]:
        if name in self.subscribers:
            raise ValueError(f"subscriber '{name}' already registered")
        channel: Channel[T] = Channel(name)
        self.subscribers[name] = channel
        return channel

    def publish(self, item: T):
        for channel in self.subscribers.values():
            channel.write(item)
