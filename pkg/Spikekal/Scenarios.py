"""
The three benchmark scenarios.

linear_motion  planar constant velocity, (X, Y) observed, 10 ms for 30 s
lorenz         Lorenz system, X1 observed, 10 ms for 30 s
uav_csv        constant-velocity tracking of a pixel trajectory loaded from CSV,
               `t,x_obs,y_obs,x_true,y_true`, 33 ms for 100 s

Noise magnitudes are harness choices, not published values.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Literal, Optional

import numpy as np

from Spikekal.Errors import ConfigError, CsvFormatError
from Spikekal.StateSpace import NoiseGenerator, StateSpaceModel, Trajectory, simulate


logger = logging.getLogger(__name__)

ScenarioName = Literal['linear_motion', 'lorenz', 'uav_csv']
SCENARIOS: tuple[str, ...] = ('linear_motion', 'lorenz', 'uav_csv')

UAV_HEADER = ['t', 'x_obs', 'y_obs', 'x_true', 'y_true']

_DEFAULTS: dict[str, dict] = {
    'linear_motion': dict(dt=0.01, duration=30.0, q_diag=(1e-4, 1e-4, 1e-2, 1e-2), r_diag=(0.25, 0.25),
                          x0=(0.0, 0.0, 1.0, 0.5)),
    'lorenz': dict(dt=0.01, duration=30.0, q_diag=(0.1, 0.1, 0.1), r_diag=(1.0,), x0=(1.0, 1.0, 1.0)),
    'uav_csv': dict(dt=0.033, duration=100.0, q_diag=(0.1, 0.1, 10.0, 10.0), r_diag=(16.0, 16.0),
                    x0=(320.0, 240.0, 20.0, -10.0)),
}

_STATE_DIMS = {'linear_motion': (4, 2), 'lorenz': (3, 1), 'uav_csv': (4, 2)}


def integral_steps(duration: float, dt: float) -> int:
    ratio = duration / dt
    steps = round(ratio)
    if steps < 1 or abs(ratio - steps) > 1e-6 * max(1.0, ratio):
        raise ConfigError(f"duration/dt = {ratio:.6f} is not a positive integer step count", key='duration')
    return int(steps)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = 'linear_motion'
    dt: float = 0.01
    duration: float = 30.0
    q_diag: tuple[float, ...] = (1e-4, 1e-4, 1e-2, 1e-2)
    r_diag: tuple[float, ...] = (0.25, 0.25)
    x0: tuple[float, ...] = (0.0, 0.0, 1.0, 0.5)
    seed: int = 0
    mismatch_q_scale: float = 10.0
    mismatch_r_scale: float = 0.1
    csv_path: Optional[str] = None
    warmup_fraction: float = 0.2

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ConfigError(f"unknown scenario '{self.name}', expected one of {', '.join(SCENARIOS)}",
                              key='scenario')
        n, m = _STATE_DIMS[self.name]
        for key, values, size in (('q_diag', self.q_diag, n), ('r_diag', self.r_diag, m), ('x0', self.x0, n)):
            if len(values) != size:
                raise ConfigError(f"{key} needs {size} values for {self.name}, got {len(values)}", key=key)
        if any(q < 0 for q in self.q_diag) or any(r < 0 for r in self.r_diag):
            raise ConfigError("noise variances must be non-negative", key='q_diag')
        if not self.dt > 0 or not self.duration > 0:
            raise ConfigError("dt and duration must be positive", key='dt')
        if self.mismatch_q_scale <= 0 or self.mismatch_r_scale <= 0:
            raise ConfigError("mismatch scales must be positive", key='mismatch_q_scale')
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must lie in [0, 1)", key='warmup_fraction')
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer", key='seed')
        if self.name != 'uav_csv':
            integral_steps(self.duration, self.dt)

    @staticmethod
    def default(name: str, **overrides) -> ScenarioConfig:
        if name not in _DEFAULTS:
            raise ConfigError(f"unknown scenario '{name}', expected one of {', '.join(SCENARIOS)}", key='scenario')
        values = {**_DEFAULTS[name], **overrides}
        return ScenarioConfig(name=name, **values)

    @property
    def steps(self) -> int:
        return integral_steps(self.duration, self.dt)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Scenario:
    config: ScenarioConfig
    model: StateSpaceModel
    trajectory: Trajectory

    @property
    def name(self) -> str:
        return self.config.name

    def mismatched_model(self) -> StateSpaceModel:
        return self.model.scaled(self.config.mismatch_q_scale, self.config.mismatch_r_scale)


def scenario_model(config: ScenarioConfig) -> StateSpaceModel:
    if config.name == 'lorenz':
        return StateSpaceModel.lorenz(np.array([[1.0, 0.0, 0.0]]), np.diag(config.q_diag),
                                      np.diag(config.r_diag), config.dt)
    return StateSpaceModel.constant_velocity(config.dt, config.q_diag, config.r_diag)


def build_scenario(config: ScenarioConfig) -> Scenario:
    model = scenario_model(config)
    if config.name == 'uav_csv':
        if config.csv_path is None:
            raise ConfigError("the uav_csv scenario needs csv_path", key='csv_path')
        trajectory = load_uav_csv(config.csv_path)
        if abs(trajectory.dt - config.dt) > 1e-6:
            logger.warning("CSV time step %.6f differs from configured dt %.6f, using the CSV step",
                           trajectory.dt, config.dt)
            model = StateSpaceModel.constant_velocity(trajectory.dt, config.q_diag, config.r_diag)
    else:
        trajectory = simulate(model, config.x0, config.steps, NoiseGenerator(config.seed))
    logger.info("scenario %s: %d steps, n=%d, m=%d", config.name, len(trajectory), model.n, model.m)
    return Scenario(config=config, model=model, trajectory=trajectory)


def load_uav_csv(path) -> Trajectory:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"UAV capture {path} does not exist", key='csv_path')
    times, obs, truth = [], [], []
    with path.open(newline='') as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != UAV_HEADER:
            raise CsvFormatError(f"header must be {','.join(UAV_HEADER)}", line=1)
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(UAV_HEADER):
                raise CsvFormatError(f"expected {len(UAV_HEADER)} fields, got {len(row)}", line=line_no)
            try:
                t, x_obs, y_obs, x_true, y_true = (float(cell) for cell in row)
            except ValueError as exc:
                raise CsvFormatError(str(exc), line=line_no) from None
            if not all(math.isfinite(v) for v in (t, x_obs, y_obs, x_true, y_true)):
                raise CsvFormatError("non-finite value", line=line_no)
            if times and t <= times[-1]:
                raise CsvFormatError("time column must increase", line=line_no)
            times.append(t)
            obs.append((x_obs, y_obs))
            truth.append((x_true, y_true))
    if not times:
        raise CsvFormatError("no data rows", line=2)
    dt = float(np.median(np.diff(times))) if len(times) > 1 else times[0]
    return Trajectory(dt=dt, truth=np.array(truth), observations=np.array(obs), labels=('X', 'Y'),
                      observation_labels=('X_obs', 'Y_obs'), truth_index=(0, 1))


def write_uav_csv(trajectory: Trajectory, path) -> Path:
    path = Path(path)
    positions = [trajectory.truth_index.index(i) for i in (0, 1)]
    with path.open('w', newline='') as fp:
        writer = csv.writer(fp, lineterminator='\n')
        writer.writerow(UAV_HEADER)
        for t, obs, truth in zip(trajectory.times, trajectory.observations, trajectory.truth):
            writer.writerow([f"{t:.6f}", repr(float(obs[0])), repr(float(obs[1])),
                             repr(float(truth[positions[0]])), repr(float(truth[positions[1]]))])
    return path


def synthesize_uav_csv(path, config: Optional[ScenarioConfig] = None) -> Path:
    """Write a UAV-like pixel capture simulated from the constant-velocity model."""
    config = config or ScenarioConfig.default('uav_csv')
    steps = int(config.duration / config.dt + 1e-9)
    model = StateSpaceModel.constant_velocity(config.dt, config.q_diag, config.r_diag)
    trajectory = simulate(model, config.x0, steps, NoiseGenerator(config.seed))
    logger.info("synthetic UAV capture: %d rows -> %s", steps, path)
    return write_uav_csv(trajectory, path)
