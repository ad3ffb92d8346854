"""
Leaky integrate-and-fire population.

    dV/dt = −(V − V_rest)/τ1 + I/τ2
    dI/dt = (I_ext − I)/τ3 + Σ W_i·s_i

forward Euler on snn_dt; a spike resets V to V_reset.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from Spikekal.Errors import ConfigError, ContractViolation
from Spikekal.Utils import Matrix, Vector, as_vector


@dataclass(frozen=True)
class LifParams:
    tau1: float = 0.020
    tau2: float = 0.020
    tau3: float = 0.010
    v_rest: float = 0.0
    v_thresh: float = 1.0
    v_reset: float = 0.0
    snn_dt: float = 0.0005

    def __post_init__(self):
        for name in ('tau1', 'tau2', 'tau3', 'snn_dt'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", key=name)
        if not self.v_thresh > self.v_rest:
            raise ConfigError("v_thresh must exceed v_rest", key='v_thresh')
        if self.snn_dt > min(self.tau1, self.tau3) / 2:
            raise ConfigError(
                f"snn_dt={self.snn_dt} violates the stability guard snn_dt <= min(tau1, tau3)/2", key='snn_dt')

    def with_step(self, snn_dt: float) -> LifParams:
        return replace(self, snn_dt=snn_dt)


@dataclass
class NeuronState:
    v: Vector
    i_syn: Vector
    last_spike_time: Vector
    now: float = 0.0

    @staticmethod
    def resting(size: int, params: LifParams) -> NeuronState:
        return NeuronState(v=np.full(size, params.v_rest), i_syn=np.zeros(size),
                           last_spike_time=np.full(size, -np.inf))

    @property
    def size(self) -> int:
        return self.v.shape[0]

    def copy(self) -> NeuronState:
        return NeuronState(self.v.copy(), self.i_syn.copy(), self.last_spike_time.copy(), self.now)


def lif_step(state: NeuronState, params: LifParams, external_current,
             W: Optional[Matrix] = None, input_spikes: Optional[np.ndarray] = None) -> tuple[NeuronState, np.ndarray]:
    """
    Advance the population by one snn_dt. `W` (size × n_pre) and `input_spikes`
    (n_pre booleans) deliver presynaptic spikes as current jumps.
    """
    external = as_vector(external_current, state.size, 'external_current')
    dt = params.snn_dt

    i_syn = state.i_syn + dt * (external - state.i_syn) / params.tau3
    if W is not None and input_spikes is not None:
        if W.shape != (state.size, len(input_spikes)):
            raise ContractViolation(f"W has shape {W.shape}, expected ({state.size}, {len(input_spikes)})")
        i_syn = i_syn + W @ np.asarray(input_spikes, dtype=np.float64)

    v = state.v + dt * (-(state.v - params.v_rest) / params.tau1 + i_syn / params.tau2)

    now = state.now + dt
    spikes = v >= params.v_thresh
    v = np.where(spikes, params.v_reset, v)
    last_spike_time = np.where(spikes, now, state.last_spike_time)
    return NeuronState(v=v, i_syn=i_syn, last_spike_time=last_spike_time, now=now), spikes
