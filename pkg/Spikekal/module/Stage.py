from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from Spikekal.Core import SimModule, SimSession, StepTime
from Spikekal.module.Channel import Broadcast, Channel


logger = logging.getLogger(__name__)


@dataclass
class StepRecord:
    estimate: np.ndarray
    gain: np.ndarray
    phase: str = ''
    fault: bool = False


class Estimator(Protocol):
    def step(self, y: np.ndarray) -> StepRecord: ...


@dataclass
class StageResult:
    name: str
    estimates: list[np.ndarray] = field(default_factory=list)
    gains: list[np.ndarray] = field(default_factory=list)
    phases: list[str] = field(default_factory=list)
    faults: list[bool] = field(default_factory=list)
    wall_time_s: float = 0.0
    error: Optional[str] = None
    input_checksum: str = ''

    @property
    def completed(self) -> int:
        return len(self.estimates)


class TrajectorySource(SimModule):
    # 每个 step 发布一个 observation, 所有 stage 收到同一个对象
    def __init__(self, observations: np.ndarray, bus: Broadcast):
        super().__init__()
        self.observations = observations
        self.bus = bus
        self.checksum = hashlib.sha256()
        self.register_coroutine(self.process)

    def process(self):
        for k, y in enumerate(self.observations):
            y = np.array(y, dtype=np.float64)
            y.setflags(write=False)
            self.checksum.update(y.tobytes())
            self.bus.publish((k, y))
            SimModule.wait_time(StepTime(1))


class EstimatorStage(SimModule):
    def __init__(self, name: str, estimator: Estimator, inbox: Channel, steps: int):
        super().__init__()
        self.name = name
        self.estimator = estimator
        self.inbox = inbox
        self.steps = steps
        self.result = StageResult(name)
        self._checksum = hashlib.sha256()
        self.register_coroutine(self.process)

    def process(self):
        for _ in range(self.steps):
            k, y = self.inbox.read()
            self._checksum.update(y.tobytes())
            if self.result.error is not None:
                continue
            started = time.perf_counter()
            try:
                record = self.estimator.step(y)
            except Exception as exc:  # 记录失败, 其余 method 继续运行
                self.result.error = f"step {k}: {type(exc).__name__}: {exc}"
                logger.warning("method %s failed at step %d: %s", self.name, k, exc)
                continue
            finally:
                self.result.wall_time_s += time.perf_counter() - started
            self.result.estimates.append(np.asarray(record.estimate, dtype=np.float64).copy())
            self.result.gains.append(np.asarray(record.gain, dtype=np.float64).copy())
            self.result.phases.append(record.phase)
            self.result.faults.append(bool(record.fault))
        self.result.input_checksum = self._checksum.hexdigest()
        logger.debug("stage %s done at %s", self.name, SimSession.sim_time)


class StageGraph:
    """One trajectory source fanned out to every estimator stage, run in lockstep."""

    def __init__(self, observations: np.ndarray):
        SimSession.reset()
        SimSession.init()
        self.steps = len(observations)
        self.bus: Broadcast = Broadcast()
        self.stages: dict[str, EstimatorStage] = {}
        self._observations = observations
        self.source: Optional[TrajectorySource] = None

    def add_stage(self, name: str, estimator: Estimator):
        inbox = self.bus.subscribe(name)
        self.stages[name] = EstimatorStage(name, estimator, inbox, self.steps)

    def run(self) -> dict[str, StageResult]:
        # source 最后注册: 每个 stage 先挂起在 inbox 上
        self.source = TrajectorySource(self._observations, self.bus)
        SimSession.scheduler.run()
        results = {name: stage.result for name, stage in self.stages.items()}
        SimSession.reset()
        return results

    @property
    def source_checksum(self) -> str:
        return self.source.checksum.hexdigest() if self.source is not None else ''
