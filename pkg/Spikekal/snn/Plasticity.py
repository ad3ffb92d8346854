"""
STDP eligibility and reward-modulated weight updates.

    ΔE = A⁺·exp(−Δt/τ⁺)   if Δt > 0
    ΔE = −A⁻·exp(Δt/τ⁻)   if Δt < 0        (Δt = t_post − t_pre)
    Δw = R·ΔE
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from Spikekal.Errors import ConfigError, ContractViolation
from Spikekal.Utils import Matrix, Vector


@dataclass(frozen=True)
class PlasticityParams:
    a_plus: float = 0.10
    a_minus: float = 0.12
    tau_plus: float = 0.020
    tau_minus: float = 0.020
    lr: float = 0.05
    w_min: float = 0.0
    w_max: float = 1.0
    tau_elig: float = 0.050

    def __post_init__(self):
        for name in ('a_plus', 'a_minus', 'tau_plus', 'tau_minus', 'tau_elig'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", key=name)
        if self.lr < 0:
            raise ConfigError("lr must be non-negative", key='lr')
        if not self.w_min < self.w_max:
            raise ConfigError("w_min must be below w_max", key='w_min')


def stdp_eligibility(delta_t: float, params: PlasticityParams) -> float:
    # 同时发放 (Δt == 0) 不产生贡献
    if delta_t > 0:
        return params.a_plus * math.exp(-delta_t / params.tau_plus)
    if delta_t < 0:
        return -params.a_minus * math.exp(delta_t / params.tau_minus)
    return 0.0


def _stdp_kernel(delta_t: np.ndarray, params: PlasticityParams) -> np.ndarray:
    ltp = params.a_plus * np.exp(-np.abs(delta_t) / params.tau_plus)
    ltd = -params.a_minus * np.exp(-np.abs(delta_t) / params.tau_minus)
    return np.where(delta_t > 0, ltp, np.where(delta_t < 0, ltd, 0.0))


@dataclass
class EligibilityTrace:
    e: Matrix
    tau_elig: float

    @staticmethod
    def zeros(n_out: int, n_in: int, params: PlasticityParams) -> EligibilityTrace:
        return EligibilityTrace(e=np.zeros((n_out, n_in)), tau_elig=params.tau_elig)


def accumulate_eligibility(trace: EligibilityTrace, pre_spikes: np.ndarray, post_spikes: np.ndarray,
                           pre_last: Vector, post_last: Vector, now: float,
                           params: PlasticityParams, snn_dt: float) -> EligibilityTrace:
    """
    One substep of nearest-neighbour pairing.

    `pre_last`/`post_last` are the most recent spike times *including* this
    substep, so simultaneous pairs see Δt = 0. A post spike pairs with the
    latest pre spike of every input (Δt ≥ 0), a pre spike with the latest post
    spike of every output (Δt ≤ 0).
    """
    e = trace.e
    if e.shape != (len(post_spikes), len(pre_spikes)):
        raise ContractViolation(f"trace shape {e.shape} does not match spikes ({len(post_spikes)}, {len(pre_spikes)})")
    e = e * math.exp(-snn_dt / trace.tau_elig)

    post_idx = np.flatnonzero(post_spikes)
    if post_idx.size:
        seen = np.isfinite(pre_last)
        delta = np.where(seen, now - pre_last, 0.0)
        e[post_idx] += np.where(seen, _stdp_kernel(delta, params), 0.0)

    pre_idx = np.flatnonzero(pre_spikes)
    if pre_idx.size:
        seen = np.isfinite(post_last)
        delta = np.where(seen, post_last - now, 0.0)
        contribution = np.where(seen, _stdp_kernel(delta, params), 0.0)
        e[:, pre_idx] += contribution[:, None]

    return EligibilityTrace(e=e, tau_elig=trace.tau_elig)


def compute_reward(K_teacher: Matrix, K_decoded: Matrix, scale: float, global_reward: bool = False) -> Vector:
    K_teacher = np.asarray(K_teacher, dtype=np.float64)
    K_decoded = np.asarray(K_decoded, dtype=np.float64)
    if K_teacher.shape != K_decoded.shape:
        raise ContractViolation(f"gain shapes differ: {K_teacher.shape} vs {K_decoded.shape}")
    reward = np.clip(scale * (K_teacher - K_decoded).reshape(-1), -1.0, 1.0)
    if global_reward:
        reward = np.full_like(reward, reward.mean())
    return reward


def rstdp_apply(W: Matrix, trace: EligibilityTrace, reward: Vector, params: PlasticityParams) -> Matrix:
    reward = np.asarray(reward, dtype=np.float64)
    if W.shape != trace.e.shape or reward.shape != (W.shape[0],):
        raise ContractViolation(f"shapes disagree: W {W.shape}, trace {trace.e.shape}, reward {reward.shape}")
    return np.clip(W + params.lr * reward[:, None] * trace.e, params.w_min, params.w_max)


def stdp_apply(W: Matrix, trace: EligibilityTrace, params: PlasticityParams) -> Matrix:
    """Unmodulated STDP (reward ≡ 1)."""
    return rstdp_apply(W, trace, np.ones(W.shape[0]), params)
