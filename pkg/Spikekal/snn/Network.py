"""
Two-layer fully connected spiking network that produces a Kalman gain.

input layer: one neuron per component of (Δx ‖ Δy), driven by direct current
             (a tonic bias plus the RMS-normalised feature)
output layer: one neuron per entry of K (row-major), driven through W
decoder: exponentially filtered spike trace with an affine readout per output
"""
from __future__ import annotations

import math
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from Spikekal.Errors import ConfigError, ContractViolation
from Spikekal.Utils import Matrix, Vector, as_vector
from Spikekal.snn.Neuron import LifParams, NeuronState, lif_step
from Spikekal.snn.Plasticity import EligibilityTrace, PlasticityParams, accumulate_eligibility


logger = logging.getLogger(__name__)


def neuron_count(n: int, m: int) -> int:
    return (n + m) + n * m


@dataclass
class NetworkTopology:
    n_in: int
    n_out: int
    W: Matrix

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.shape != (self.n_out, self.n_in):
            raise ContractViolation(f"W must be {self.n_out}×{self.n_in}, got {self.W.shape}")

    @staticmethod
    def for_model(n: int, m: int, rng: np.random.Generator, w_init_max: float = 0.5) -> NetworkTopology:
        n_in, n_out = n + m, n * m
        return NetworkTopology(n_in, n_out, rng.uniform(0.0, w_init_max, size=(n_out, n_in)))

    @property
    def neurons(self) -> int:
        return self.n_in + self.n_out


@dataclass
class GainDecoder:
    trace: Vector
    tau_dec: float
    gain: Vector
    bias: Vector
    lms_rate: float

    def __post_init__(self):
        if not self.tau_dec > 0:
            raise ConfigError("tau_dec must be positive", key='tau_dec')
        if not (self.trace.shape == self.gain.shape == self.bias.shape):
            raise ContractViolation("decoder trace, gain and bias must share one shape")

    @staticmethod
    def initial(n_out: int, tau_dec: float = 0.005, lms_rate: float = 0.02,
                gain: float = 0.0, bias: float = 0.0) -> GainDecoder:
        return GainDecoder(trace=np.zeros(n_out), tau_dec=tau_dec, gain=np.full(n_out, gain),
                           bias=np.full(n_out, bias), lms_rate=lms_rate)

    def trace_bound(self, snn_dt: float) -> float:
        # 每个 substep 至多一个 spike, trace 不超过几何级数的和
        return 1.0 / (1.0 - math.exp(-snn_dt / self.tau_dec))

    def readout(self) -> Vector:
        return self.gain * self.trace + self.bias


@dataclass
class SpikingNetwork:
    topology: NetworkTopology
    lif: LifParams
    inputs: NeuronState
    outputs: NeuronState
    decoder: GainDecoder

    @staticmethod
    def build(n: int, m: int, lif: LifParams, decoder: GainDecoder, rng: np.random.Generator,
              w_init_max: float = 0.5) -> SpikingNetwork:
        topology = NetworkTopology.for_model(n, m, rng, w_init_max)
        if decoder.trace.shape != (topology.n_out,):
            raise ContractViolation(f"decoder needs {topology.n_out} outputs, has {decoder.trace.shape[0]}")
        return SpikingNetwork(topology=topology, lif=lif,
                              inputs=NeuronState.resting(topology.n_in, lif),
                              outputs=NeuronState.resting(topology.n_out, lif),
                              decoder=decoder)

    @property
    def neurons(self) -> int:
        return self.topology.neurons

    @property
    def now(self) -> float:
        return self.inputs.now


@dataclass
class FeatureScaler:
    """Per-feature RMS over roughly the last `window` filter steps."""
    mean_square: Vector
    window: int
    updates: int = 0

    @staticmethod
    def zeros(size: int, window: int) -> FeatureScaler:
        if window < 1:
            raise ConfigError("feature_window must be >= 1", key='feature_window')
        return FeatureScaler(mean_square=np.zeros(size), window=window)

    def normalize(self, features: Vector) -> Vector:
        if features.shape != self.mean_square.shape:
            raise ContractViolation(f"scaler tracks {self.mean_square.size} features, got {features.size}")
        rate = 1.0 / self.window
        self.mean_square = (1.0 - rate) * self.mean_square + rate * features ** 2
        self.updates += 1
        # 零初始化的滑动平均做偏差修正
        rms = np.sqrt(self.mean_square / (1.0 - (1.0 - rate) ** self.updates))
        return np.divide(features, rms, out=np.zeros_like(features), where=rms > 0)


@dataclass
class ForwardResult:
    spike_counts: np.ndarray
    traces: Vector
    input_spike_counts: np.ndarray
    eligibility: Optional[EligibilityTrace] = None


def encode_features(delta_x, delta_y, input_gain: float = 1.0, input_bias: float = 0.0,
                    scaler: Optional[FeatureScaler] = None) -> Vector:
    """
    Direct analog coding: input_bias + input_gain·(Δx ‖ Δy), the features divided
    by their running RMS first when a `scaler` is given (updated in place).
    """
    delta_x = as_vector(delta_x, name='delta_x')
    delta_y = as_vector(delta_y, name='delta_y')
    features = np.concatenate([delta_x, delta_y])
    if scaler is not None:
        features = scaler.normalize(features)
    return input_bias + input_gain * features


def network_forward(net: SpikingNetwork, input_currents, substeps: int,
                    eligibility: Optional[EligibilityTrace] = None,
                    plasticity: Optional[PlasticityParams] = None) -> ForwardResult:
    """
    Run `substeps` LIF substeps. When `eligibility` and `plasticity` are given the
    pairwise STDP terms are accumulated on the way. Mutates `net` in place.
    """
    if substeps < 1:
        raise ContractViolation(f"substeps must be >= 1, got {substeps}")
    currents = as_vector(input_currents, net.topology.n_in, 'input_currents')
    learn = eligibility is not None and plasticity is not None

    lif = net.lif
    decay = math.exp(-lif.snn_dt / net.decoder.tau_dec)
    zero_out = np.zeros(net.topology.n_out)
    in_counts = np.zeros(net.topology.n_in, dtype=np.int64)
    out_counts = np.zeros(net.topology.n_out, dtype=np.int64)
    trace = net.decoder.trace

    for _ in range(substeps):
        net.inputs, in_spikes = lif_step(net.inputs, lif, currents)
        net.outputs, out_spikes = lif_step(net.outputs, lif, zero_out, net.topology.W, in_spikes)
        trace = trace * decay + out_spikes
        in_counts += in_spikes
        out_counts += out_spikes
        if learn:
            eligibility = accumulate_eligibility(eligibility, in_spikes, out_spikes,
                                                 net.inputs.last_spike_time, net.outputs.last_spike_time,
                                                 net.inputs.now, plasticity, lif.snn_dt)

    net.decoder.trace = trace
    return ForwardResult(spike_counts=out_counts, traces=trace.copy(),
                         input_spike_counts=in_counts, eligibility=eligibility)


def decode_gain(decoder: GainDecoder, n: int, m: int) -> Matrix:
    if decoder.trace.shape != (n * m,):
        raise ContractViolation(f"decoder has {decoder.trace.shape[0]} traces, a {n}×{m} gain needs {n * m}")
    return decoder.readout().reshape(n, m)


def decoder_lms_update(decoder: GainDecoder, K_teacher: Matrix) -> GainDecoder:
    target = np.asarray(K_teacher, dtype=np.float64).reshape(-1)
    if target.shape != decoder.trace.shape:
        raise ContractViolation(f"teacher gain has {target.size} entries, decoder {decoder.trace.size}")
    error = target - decoder.readout()
    decoder.gain = decoder.gain + decoder.lms_rate * error * decoder.trace
    decoder.bias = decoder.bias + decoder.lms_rate * error
    return decoder
