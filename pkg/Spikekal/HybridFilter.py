"""
Kalman filter whose gain comes from a spiking network.

Each step: predict x̂ = A·x, extract (Δx, Δy), drive the network with them,
decode K from the output traces and correct x = x̂ + K·(y − H·x̂).
During the first `teacher_steps` steps a classic filter runs alongside and
supplies the gain, the decoder regression target and the R-STDP reward.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from Spikekal.Errors import ConfigError, ContractViolation
from Spikekal.Filters import (GainMatrix, KalmanState, check_gain, initial_state, kf_step,
                              transition_matrix)
from Spikekal.StateSpace import NoiseGenerator, StateSpaceModel, Trajectory
from Spikekal.Utils import Matrix, Vector, as_vector
from Spikekal.snn.Checkpoint import Checkpoint
from Spikekal.snn.Network import (FeatureScaler, GainDecoder, SpikingNetwork, decode_gain, decoder_lms_update,
                                  encode_features, network_forward, neuron_count)
from Spikekal.snn.Neuron import LifParams
from Spikekal.snn.Plasticity import (EligibilityTrace, PlasticityParams, compute_reward, rstdp_apply)


logger = logging.getLogger(__name__)

Phase = Literal['teacher', 'autonomous']

WEIGHT_STREAM = 'weights'


@dataclass(frozen=True)
class DecoderParams:
    tau_dec: float = 0.005
    lms_rate: float = 0.02
    gain_init: float = 0.0
    bias_init: float = 0.0

    def __post_init__(self):
        if not self.tau_dec > 0:
            raise ConfigError("tau_dec must be positive", key='tau_dec')
        if self.lms_rate < 0:
            raise ConfigError("lms_rate must be non-negative", key='lms_rate')

    def build(self, n_out: int) -> GainDecoder:
        return GainDecoder.initial(n_out, self.tau_dec, self.lms_rate, self.gain_init, self.bias_init)


@dataclass(frozen=True)
class SpikeKalConfig:
    teacher_steps: int = 500
    snn_substeps: int = 20
    input_gain: float = 2.0
    input_bias: float = 3.0
    normalize_features: bool = True
    feature_window: int = 100
    lif: LifParams = field(default_factory=LifParams)
    plasticity: PlasticityParams = field(default_factory=PlasticityParams)
    decoder: DecoderParams = field(default_factory=DecoderParams)
    post_teacher_adapt: bool = False
    global_reward: bool = False
    reward_scale: float = 10.0
    w_init_max: float = 0.5
    adapt_rate: float = 0.01
    early_stop_error: Optional[float] = None
    early_stop_window: int = 100

    def __post_init__(self):
        if self.teacher_steps < 1:
            raise ConfigError("teacher_steps must be >= 1", key='teacher_steps')
        if self.snn_substeps < 1:
            raise ConfigError("snn_substeps must be >= 1", key='snn_substeps')
        if self.reward_scale <= 0:
            raise ConfigError("reward_scale must be positive", key='reward_scale')
        if not self.plasticity.w_min <= self.w_init_max <= self.plasticity.w_max:
            raise ConfigError("w_init_max must lie within [w_min, w_max]", key='w_init_max')
        if self.early_stop_window < 1:
            raise ConfigError("early_stop_window must be >= 1", key='early_stop_window')
        if self.feature_window < 1:
            raise ConfigError("feature_window must be >= 1", key='feature_window')

    def lif_for(self, dt: float) -> LifParams:
        """LIF parameters with snn_dt = dt / snn_substeps, checked against the trace bound."""
        lif = self.lif.with_step(dt / self.snn_substeps)
        bound = self.decoder.build(1).trace_bound(lif.snn_dt)
        if bound > self.snn_substeps:
            raise ConfigError(f"tau_dec={self.decoder.tau_dec} lets decoder traces reach {bound:.1f} "
                              f"> snn_substeps={self.snn_substeps}", key='tau_dec')
        return lif


@dataclass
class SpikeKalState:
    net: SpikingNetwork
    eligibility: EligibilityTrace
    kalman: Optional[KalmanState]
    posterior: Vector
    prior: Vector
    teacher_until: int
    scaler: Optional[FeatureScaler] = None
    step_index: int = 0
    prev_innovation: Optional[Vector] = None
    recent_errors: deque = field(default_factory=deque)

    @property
    def phase(self) -> Phase:
        return 'teacher' if self.step_index < self.teacher_until else 'autonomous'

    @staticmethod
    def create(model: StateSpaceModel, config: SpikeKalConfig, y0, seed: int,
               checkpoint: Optional[Checkpoint] = None) -> SpikeKalState:
        lif = config.lif_for(model.dt)
        rng = NoiseGenerator(seed).stream(WEIGHT_STREAM)
        net = SpikingNetwork.build(model.n, model.m, lif, config.decoder.build(model.n * model.m), rng,
                                   config.w_init_max)
        if checkpoint is not None:
            checkpoint.apply_to(net)
        kalman = initial_state(model, y0)
        return SpikeKalState(net=net,
                             eligibility=EligibilityTrace.zeros(net.topology.n_out, net.topology.n_in,
                                                                config.plasticity),
                             kalman=kalman, posterior=kalman.x.copy(), prior=kalman.x.copy(),
                             teacher_until=config.teacher_steps,
                             scaler=FeatureScaler.zeros(model.n + model.m, config.feature_window)
                             if config.normalize_features else None)


@dataclass
class StepOutcome:
    estimate: Vector
    K_used: GainMatrix
    K_snn: GainMatrix
    phase: Phase
    fault: bool = False
    K_teacher: Optional[GainMatrix] = None
    spike_counts: Optional[np.ndarray] = None


def spikekal_features(state: SpikeKalState, model: StateSpaceModel, y: Vector,
                      x_prior: Vector) -> tuple[Vector, Vector]:
    """Δx = previous posterior − previous prior (zero before the first step), Δy = y − H·x̂."""
    delta_x = state.posterior - state.prior
    delta_y = y - model.H @ x_prior
    return delta_x, delta_y


def _adaptation_target(K_snn: GainMatrix, model: StateSpaceModel, A: Matrix, innovation: Vector,
                       prev_innovation: Optional[Vector], adapt_rate: float) -> Optional[GainMatrix]:
    # 无 teacher 时沿一步 innovation 能量的负梯度方向调整 K
    if prev_innovation is None:
        return None
    grad = np.outer((model.H @ A).T @ innovation, prev_innovation)
    return K_snn + adapt_rate * grad / (1.0 + float(prev_innovation @ prev_innovation))


def spikekal_step(state: SpikeKalState, model: StateSpaceModel, y, config: SpikeKalConfig) -> StepOutcome:
    y = as_vector(y, model.m, 'y')
    if state.net.topology.n_in != model.n + model.m:
        raise ContractViolation("network does not match the model dimensions")
    n, m = model.n, model.m
    net = state.net
    phase = state.phase
    teacher = phase == 'teacher'
    learn = teacher or config.post_teacher_adapt

    A = transition_matrix(model, state.posterior)
    x_prior = model.predict_mean(state.posterior)
    delta_x, delta_y = spikekal_features(state, model, y, x_prior)

    currents = encode_features(delta_x, delta_y, config.input_gain, config.input_bias, state.scaler)
    forward = network_forward(net, currents, config.snn_substeps,
                              state.eligibility if learn else None,
                              config.plasticity if learn else None)
    if learn:
        state.eligibility = forward.eligibility
    K_snn = decode_gain(net.decoder, n, m)
    snn_ok = check_gain(K_snn)

    fault = False
    K_teacher = None
    target = None
    if teacher:
        state.kalman, K_teacher = kf_step(state.kalman, model, y)
        K_used = K_teacher
        x_prior = state.kalman.x_prior
        posterior = state.kalman.x
        target = K_teacher
    else:
        if snn_ok:
            K_used = K_snn
        else:
            fault = True
            K_used = np.zeros((n, m))
            logger.warning("step %d: non-finite SNN gain %s, zero-gain update", state.step_index,
                           np.argwhere(~np.isfinite(K_snn)).tolist())
        posterior = x_prior + K_used @ (y - model.H @ x_prior)
        if config.post_teacher_adapt and snn_ok:
            target = _adaptation_target(K_snn, model, A, delta_y, state.prev_innovation, config.adapt_rate)

    if target is not None and snn_ok:
        reward = compute_reward(target, K_snn, config.reward_scale, config.global_reward)
        decoder_lms_update(net.decoder, target)
        net.topology.W = rstdp_apply(net.topology.W, state.eligibility, reward, config.plasticity)

    if teacher and config.early_stop_error is not None and snn_ok:
        _check_early_stop(state, K_teacher, K_snn, config)

    logger.debug("step %d %s K=%s spikes=%s", state.step_index, phase, K_used.tolist(),
                 forward.spike_counts.tolist())

    state.prior = x_prior
    state.posterior = posterior
    state.prev_innovation = delta_y
    state.step_index += 1
    if teacher and state.phase == 'autonomous':
        logger.info("teacher phase finished at step %d", state.step_index)
        # 自主阶段不再维护协方差
        state.kalman = None

    return StepOutcome(estimate=posterior, K_used=K_used, K_snn=K_snn, phase=phase, fault=fault,
                       K_teacher=K_teacher, spike_counts=forward.spike_counts)


def _check_early_stop(state: SpikeKalState, K_teacher: GainMatrix, K_snn: GainMatrix, config: SpikeKalConfig):
    norm = float(np.linalg.norm(K_teacher))
    error = float(np.linalg.norm(K_teacher - K_snn)) / norm if norm > 0 else float(np.linalg.norm(K_snn))
    state.recent_errors.append(error)
    if len(state.recent_errors) > config.early_stop_window:
        state.recent_errors.popleft()
    if len(state.recent_errors) == config.early_stop_window and \
            float(np.mean(state.recent_errors)) < config.early_stop_error:
        logger.info("early stop: rolling decoder error %.4f below %.4f at step %d",
                    float(np.mean(state.recent_errors)), config.early_stop_error, state.step_index)
        state.teacher_until = state.step_index + 1


class SpikeKalFilter:
    """Stateful wrapper used by the harness; the state is created from the first observation."""

    def __init__(self, model: StateSpaceModel, config: SpikeKalConfig, seed: int,
                 checkpoint: Optional[Checkpoint] = None):
        self.model = model
        self.config = config
        self.seed = seed
        self.checkpoint = checkpoint
        self.state: Optional[SpikeKalState] = None
        if checkpoint is not None and (checkpoint.n_in, checkpoint.n_out) != (model.n + model.m, model.n * model.m):
            raise ConfigError(f"checkpoint is {checkpoint.n_out}×{checkpoint.n_in}, the model needs "
                              f"{model.n * model.m}×{model.n + model.m}", key='checkpoint')

    @property
    def neurons(self) -> int:
        return neuron_count(self.model.n, self.model.m)

    def step(self, y) -> StepOutcome:
        if self.state is None:
            self.state = SpikeKalState.create(self.model, self.config, y, self.seed, self.checkpoint)
        return spikekal_step(self.state, self.model, y, self.config)


@dataclass
class SpikeKalRun:
    estimates: Matrix
    gains: np.ndarray
    phases: list[Phase]
    faults: np.ndarray
    transition_step: Optional[int]
    final_state: SpikeKalState

    @property
    def autonomous_mask(self) -> np.ndarray:
        return np.array([p == 'autonomous' for p in self.phases])


def run_spikekal(model: StateSpaceModel, trajectory: Trajectory, config: SpikeKalConfig, seed: int = 0,
                 checkpoint: Optional[Checkpoint] = None) -> SpikeKalRun:
    observations = trajectory.observations
    if observations.shape[1] != model.m:
        raise ContractViolation(f"observations have {observations.shape[1]} columns, model expects {model.m}")
    spikekal = SpikeKalFilter(model, config, seed, checkpoint)
    T = observations.shape[0]
    estimates = np.empty((T, model.n))
    gains = np.empty((T, model.n, model.m))
    phases: list[Phase] = []
    faults = np.zeros(T, dtype=bool)
    transition_step = None
    for k, y in enumerate(observations):
        outcome = spikekal.step(y)
        estimates[k] = outcome.estimate
        gains[k] = outcome.K_used
        faults[k] = outcome.fault
        if phases and phases[-1] == 'teacher' and outcome.phase == 'autonomous':
            transition_step = k
        phases.append(outcome.phase)
    return SpikeKalRun(estimates=estimates, gains=gains, phases=phases, faults=faults,
                       transition_step=transition_step, final_state=spikekal.state)
