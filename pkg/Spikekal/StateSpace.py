"""
State-space models, seeded Gaussian noise and ground-truth simulation.

    x_t = A·x_{t-1} + w_t,   w_t ~ N(0, Q)        (linear)
    x_t = RK4(f, x_{t-1}, dt) + w_t               (lorenz)
    y_t = H·x_t + v_t,       v_t ~ N(0, R_obs)
"""
from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from Spikekal.Errors import ContractViolation, ModelValidationError, CsvFormatError
from Spikekal.Utils import Matrix, Vector, as_matrix, as_vector, covariance_factor, min_eigenvalue


logger = logging.getLogger(__name__)

LORENZ_SIGMA = 10.0
LORENZ_RHO = 28.0
LORENZ_BETA = 8.0 / 3.0

PSD_TOLERANCE = 1e-10


@dataclass(eq=False)
class StateSpaceModel:
    kind: Literal['linear', 'lorenz']
    H: Matrix
    Q: Matrix
    R_obs: Matrix
    dt: float
    A: Optional[Matrix] = None
    state_labels: tuple[str, ...] = ()

    q_factor: Matrix = field(init=False, repr=False)
    r_factor: Matrix = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ('linear', 'lorenz'):
            raise ModelValidationError(f"unknown model kind '{self.kind}'")
        if not self.dt > 0:
            raise ModelValidationError(f"dt must be positive, got {self.dt}")
        self.H = as_matrix(self.H, name='H')
        m, n = self.H.shape
        if m > n:
            raise ModelValidationError(f"H must be m×n with m <= n, got {self.H.shape}")
        if self.kind == 'lorenz' and n != 3:
            raise ModelValidationError("lorenz models have a 3-dimensional state")
        if self.kind == 'linear':
            if self.A is None:
                raise ModelValidationError("linear models need a transition matrix A")
            self.A = as_matrix(self.A, name='A')
            if self.A.shape != (n, n):
                raise ModelValidationError(f"A must be {n}×{n}, got {self.A.shape}")
        self.Q = self._checked_covariance(self.Q, n, 'Q')
        self.R_obs = self._checked_covariance(self.R_obs, m, 'R_obs')
        if min_eigenvalue(self.R_obs) <= PSD_TOLERANCE:
            logger.warning("R_obs is singular; accepted for noise-free models only")
        if not self.state_labels:
            self.state_labels = tuple(f"x{i + 1}" for i in range(n))
        if len(self.state_labels) != n:
            raise ModelValidationError("state_labels must name every state dimension")
        self.q_factor = covariance_factor(self.Q)
        self.r_factor = covariance_factor(self.R_obs)

    @staticmethod
    def _checked_covariance(value, size: int, name: str) -> Matrix:
        cov = as_matrix(value, name=name)
        if cov.shape != (size, size):
            raise ModelValidationError(f"{name} must be {size}×{size}, got {cov.shape}")
        if not np.all(np.isfinite(cov)):
            raise ModelValidationError(f"{name} has non-finite entries")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ModelValidationError(f"{name} must be symmetric")
        scale = max(1.0, float(np.abs(cov).max()))
        if min_eigenvalue(cov) < -PSD_TOLERANCE * scale:
            raise ModelValidationError(f"{name} is not positive semi-definite")
        return cov

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def observation_labels(self) -> tuple[str, ...]:
        labels = []
        for row in range(self.m):
            idx = self.observed_index(row)
            labels.append(f"{self.state_labels[idx]}_obs" if idx is not None else f"y{row + 1}")
        return tuple(labels)

    def observed_index(self, row: int) -> Optional[int]:
        # H 的一行只选中一个状态分量时返回该分量的下标
        nonzero = np.flatnonzero(self.H[row])
        if len(nonzero) == 1 and self.H[row, nonzero[0]] == 1.0:
            return int(nonzero[0])
        return None

    def scaled(self, q_scale: float, r_scale: float) -> StateSpaceModel:
        """Copy with Q and R_obs scaled, the mismatched-filter model."""
        if q_scale <= 0 or r_scale <= 0:
            raise ModelValidationError("noise scale factors must be positive")
        return StateSpaceModel(kind=self.kind, H=self.H.copy(), Q=self.Q * q_scale,
                               R_obs=self.R_obs * r_scale, dt=self.dt,
                               A=None if self.A is None else self.A.copy(),
                               state_labels=self.state_labels)

    def predict_mean(self, x: Vector) -> Vector:
        """Prior mean used by the filters (Euler map for Lorenz)."""
        x = as_vector(x, self.n, 'x')
        if self.kind == 'linear':
            return self.A @ x
        return x + self.dt * lorenz_derivative(x)

    @staticmethod
    def linear(A, H, Q, R_obs, dt: float, state_labels: Sequence[str] = ()) -> StateSpaceModel:
        return StateSpaceModel('linear', H=H, Q=Q, R_obs=R_obs, dt=dt, A=A, state_labels=tuple(state_labels))

    @staticmethod
    def lorenz(H, Q, R_obs, dt: float) -> StateSpaceModel:
        return StateSpaceModel('lorenz', H=H, Q=Q, R_obs=R_obs, dt=dt, state_labels=('X1', 'X2', 'X3'))

    @staticmethod
    def constant_velocity(dt: float, q_diag: Sequence[float], r_diag: Sequence[float]) -> StateSpaceModel:
        """Planar constant-velocity model, state (X, Y, Vx, Vy), positions observed."""
        A = np.array([[1.0, 0.0, dt, 0.0],
                      [0.0, 1.0, 0.0, dt],
                      [0.0, 0.0, 1.0, 0.0],
                      [0.0, 0.0, 0.0, 1.0]])
        H = np.array([[1.0, 0.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0, 0.0]])
        return StateSpaceModel.linear(A, H, np.diag(q_diag), np.diag(r_diag), dt, ('X', 'Y', 'Vx', 'Vy'))


def constant_velocity_matrix(dt: float) -> Matrix:
    return StateSpaceModel.constant_velocity(dt, [0.0] * 4, [1.0] * 2).A


class NoiseGenerator:
    """
    Seeded, splittable noise source.

    Every named stream owns an independent counter-based Philox generator
    derived from (seed, stream name), so process and observation noise do not
    interfere and draws depend only on the seed and the per-stream call order.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2 ** 64:
            raise ContractViolation(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}
        self.positions: dict[str, int] = {}

    @staticmethod
    def _stream_key(name: str) -> int:
        return int.from_bytes(hashlib.sha256(name.encode('utf-8')).digest()[:8], 'little')

    def stream(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            seq = np.random.SeedSequence(self.seed, spawn_key=(self._stream_key(name),))
            self._streams[name] = np.random.Generator(np.random.Philox(seq))
            self.positions[name] = 0
        return self._streams[name]

    def standard_normal(self, name: str, size: int) -> Vector:
        draws = self.stream(name).standard_normal(size)
        self.positions[name] += size
        return draws

    def gaussian(self, name: str, factor: Matrix) -> Vector:
        # factor·z with z ~ N(0, I); draws are consumed even when factor == 0
        return factor @ self.standard_normal(name, factor.shape[1])


PROCESS_STREAM = 'process'
OBSERVATION_STREAM = 'observation'


def lorenz_derivative(x: Vector) -> Vector:
    x = as_vector(x, 3, 'x')
    x1, x2, x3 = x
    return np.array([
        LORENZ_SIGMA * (x2 - x1),
        x1 * (LORENZ_RHO - x3) - x2,
        x1 * x2 - LORENZ_BETA * x3,
    ])


def rk4_step(f: Callable[[Vector], Vector], x: Vector, dt: float) -> Vector:
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def evolve(model: StateSpaceModel, x: Vector, noise: NoiseGenerator) -> Vector:
    x = as_vector(x, model.n, 'x')
    if model.kind == 'linear':
        mean = model.A @ x
    else:
        mean = rk4_step(lorenz_derivative, x, model.dt)
    return mean + noise.gaussian(PROCESS_STREAM, model.q_factor)


def observe(model: StateSpaceModel, x: Vector, noise: NoiseGenerator) -> Vector:
    x = as_vector(x, model.n, 'x')
    return model.H @ x + noise.gaussian(OBSERVATION_STREAM, model.r_factor)


@dataclass(eq=False)
class Trajectory:
    """
    Time-indexed truth and observations with a shared step.

    `truth` may cover a subset of the state (e.g. annotated positions only);
    `truth_index` gives the state index of every truth column.
    """
    dt: float
    truth: Matrix
    observations: Matrix
    labels: tuple[str, ...]
    observation_labels: tuple[str, ...] = ()
    truth_index: tuple[int, ...] = ()

    def __post_init__(self):
        self.truth = np.atleast_2d(np.asarray(self.truth, dtype=np.float64))
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=np.float64))
        if self.truth.shape[0] < 1:
            raise ContractViolation("a trajectory needs at least one step")
        if self.truth.shape[0] != self.observations.shape[0]:
            raise ContractViolation(
                f"truth and observations differ in length: {self.truth.shape[0]} vs {self.observations.shape[0]}")
        if not self.truth_index:
            self.truth_index = tuple(range(self.truth.shape[1]))
        if len(self.truth_index) != self.truth.shape[1] or len(self.labels) != self.truth.shape[1]:
            raise ContractViolation("labels and truth_index must match the truth columns")
        if not self.observation_labels:
            self.observation_labels = tuple(f"y{i + 1}" for i in range(self.observations.shape[1]))

    def __len__(self) -> int:
        return self.truth.shape[0]

    @property
    def times(self) -> Vector:
        return (np.arange(len(self)) + 1) * self.dt

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.observations).tobytes()).hexdigest()

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open('w', newline='') as fp:
            writer = csv.writer(fp, lineterminator='\n')
            writer.writerow(['t', *self.labels, *self.observation_labels])
            for t, truth, obs in zip(self.times, self.truth, self.observations):
                writer.writerow([f"{t:.6f}", *(repr(float(v)) for v in truth), *(repr(float(v)) for v in obs)])
        return path

    @staticmethod
    def from_csv(path, n_truth: int, truth_index: Sequence[int] = ()) -> Trajectory:
        """Read a file written by `to_csv`; the first `n_truth` value columns are truth."""
        path = Path(path)
        with path.open(newline='') as fp:
            reader = csv.reader(fp)
            header = next(reader, None)
            if header is None or not header or header[0] != 't':
                raise CsvFormatError("missing 't,...' header", line=1)
            width = len(header)
            if width - 1 <= n_truth:
                raise CsvFormatError("header has no observation columns", line=1)
            times, rows = [], []
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != width:
                    raise CsvFormatError(f"expected {width} fields, got {len(row)}", line=line_no)
                try:
                    values = [float(v) for v in row]
                except ValueError as exc:
                    raise CsvFormatError(str(exc), line=line_no) from None
                times.append(values[0])
                rows.append(values[1:])
        if not rows:
            raise CsvFormatError("no data rows", line=2)
        data = np.array(rows)
        dt = times[1] - times[0] if len(times) > 1 else times[0]
        return Trajectory(dt=round(dt, 6), truth=data[:, :n_truth], observations=data[:, n_truth:],
                          labels=tuple(header[1:1 + n_truth]), observation_labels=tuple(header[1 + n_truth:]),
                          truth_index=tuple(truth_index))


def simulate(model: StateSpaceModel, x0, steps: int, noise: NoiseGenerator) -> Trajectory:
    if steps < 1:
        raise ContractViolation(f"steps must be >= 1, got {steps}")
    x = as_vector(x0, model.n, 'x0')
    truth = np.empty((steps, model.n))
    observations = np.empty((steps, model.m))
    for k in range(steps):
        x = evolve(model, x, noise)
        truth[k] = x
        observations[k] = observe(model, x, noise)
    return Trajectory(dt=model.dt, truth=truth, observations=observations,
                      labels=model.state_labels, observation_labels=model.observation_labels)
