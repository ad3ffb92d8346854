import math

import numpy as np
import pytest

from Spikekal.Errors import ConfigError, ContractViolation
from Spikekal.snn.Plasticity import (EligibilityTrace, PlasticityParams, accumulate_eligibility, compute_reward,
                                     rstdp_apply, stdp_apply, stdp_eligibility)


def test_eligibility_kernel_values():
    params = PlasticityParams(a_plus=0.1, a_minus=0.12, tau_plus=0.02, tau_minus=0.02)
    assert stdp_eligibility(0.02, params) == pytest.approx(0.03679, abs=1e-5)
    assert stdp_eligibility(-0.02, params) == pytest.approx(-0.12 * math.exp(-1.0))
    assert stdp_eligibility(0.0, params) == 0.0


def test_eligibility_sign_structure():
    params = PlasticityParams()
    for dt in (1e-4, 0.005, 0.05):
        assert stdp_eligibility(dt, params) > 0
        assert stdp_eligibility(-dt, params) < 0
    # 越远贡献越小
    assert stdp_eligibility(0.001, params) > stdp_eligibility(0.01, params)


def test_zero_reward_is_a_no_op():
    params = PlasticityParams()
    W = np.array([[0.2, 0.7], [0.4, 0.9]])
    trace = EligibilityTrace(e=np.array([[0.5, -0.3], [0.1, 0.2]]), tau_elig=params.tau_elig)
    np.testing.assert_array_equal(rstdp_apply(W, trace, np.zeros(2), params), W)


def test_reward_modulated_update_and_clipping():
    params = PlasticityParams(lr=0.5, w_min=0.0, w_max=1.0)
    W = np.array([[0.5, 0.5], [0.95, 0.05]])
    trace = EligibilityTrace(e=np.array([[0.2, -0.2], [0.4, -0.4]]), tau_elig=params.tau_elig)
    updated = rstdp_apply(W, trace, np.array([1.0, 1.0]), params)
    np.testing.assert_allclose(updated, [[0.6, 0.4], [1.0, 0.0]])
    negative = rstdp_apply(W, trace, np.array([-1.0, 0.0]), params)
    np.testing.assert_allclose(negative, [[0.4, 0.6], [0.95, 0.05]])
    np.testing.assert_allclose(stdp_apply(W, trace, params), updated)


def test_update_shape_contract():
    params = PlasticityParams()
    trace = EligibilityTrace.zeros(2, 3, params)
    with pytest.raises(ContractViolation):
        rstdp_apply(np.zeros((2, 2)), trace, np.zeros(2), params)
    with pytest.raises(ContractViolation):
        rstdp_apply(np.zeros((2, 3)), trace, np.zeros(3), params)


def test_reward_per_row_and_global():
    K_teacher = np.array([[0.5], [0.0]])
    K_decoded = np.array([[0.45], [0.3]])
    reward = compute_reward(K_teacher, K_decoded, scale=10.0)
    np.testing.assert_allclose(reward, [0.5, -1.0])
    shared = compute_reward(K_teacher, K_decoded, scale=10.0, global_reward=True)
    np.testing.assert_allclose(shared, [-0.25, -0.25])
    with pytest.raises(ContractViolation):
        compute_reward(np.zeros((2, 1)), np.zeros((1, 2)), 1.0)


def test_pre_before_post_pairing():
    params = PlasticityParams()
    snn_dt = 0.001
    trace = EligibilityTrace.zeros(1, 1, params)
    # pre spike at t = 0.001
    trace = accumulate_eligibility(trace, np.array([True]), np.array([False]), np.array([0.001]),
                                   np.array([-np.inf]), 0.001, params, snn_dt)
    assert trace.e[0, 0] == 0.0
    # post spike at t = 0.006 pairs with the pre spike 5 ms earlier
    trace = accumulate_eligibility(trace, np.array([False]), np.array([True]), np.array([0.001]),
                                   np.array([0.006]), 0.006, params, snn_dt)
    expected = params.a_plus * math.exp(-0.005 / params.tau_plus)
    assert trace.e[0, 0] == pytest.approx(expected)


def test_post_before_pre_pairing_and_decay():
    params = PlasticityParams()
    snn_dt = 0.001
    trace = EligibilityTrace(e=np.array([[0.1]]), tau_elig=params.tau_elig)
    trace = accumulate_eligibility(trace, np.array([True]), np.array([False]), np.array([0.010]),
                                   np.array([0.007]), 0.010, params, snn_dt)
    decayed = 0.1 * math.exp(-snn_dt / params.tau_elig)
    ltd = -params.a_minus * math.exp(-0.003 / params.tau_minus)
    assert trace.e[0, 0] == pytest.approx(decayed + ltd)


def test_simultaneous_spikes_do_not_contribute():
    params = PlasticityParams()
    trace = EligibilityTrace.zeros(2, 2, params)
    last = np.array([0.004, 0.004])
    trace = accumulate_eligibility(trace, np.array([True, True]), np.array([True, True]), last, last, 0.004,
                                   params, 0.001)
    np.testing.assert_array_equal(trace.e, np.zeros((2, 2)))


def test_parameter_validation():
    with pytest.raises(ConfigError):
        PlasticityParams(w_min=1.0, w_max=0.5)
    with pytest.raises(ConfigError):
        PlasticityParams(tau_plus=0.0)
    with pytest.raises(ConfigError):
        PlasticityParams(lr=-0.1)
