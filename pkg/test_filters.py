import numpy as np
import pytest

from Spikekal.Errors import ContractViolation, NumericalError
from Spikekal.Filters import (KalmanFilter, KalmanState, ekf_jacobian, initial_state, kf_gain, kf_predict, kf_step,
                              kf_update, lorenz_jacobian, riccati_gain, run_kalman)
from Spikekal.Scenarios import ScenarioConfig, build_scenario
from Spikekal.StateSpace import NoiseGenerator, StateSpaceModel, lorenz_derivative, rk4_step, simulate


def _random_system(seed=42, n=4, m=2):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    A *= 0.95 / np.max(np.abs(np.linalg.eigvals(A)))
    H = rng.normal(size=(m, n))
    B = rng.normal(size=(n, n))
    C = rng.normal(size=(m, m))
    Q = 0.1 * B @ B.T + 0.01 * np.eye(n)
    R = 0.1 * C @ C.T + 0.1 * np.eye(m)
    return StateSpaceModel.linear(A, H, Q, R, 0.1)


def _dense_kalman(A, H, Q, R, observations):
    # straight-line reference: predict, gain, update with explicit inverses
    n = A.shape[0]
    x = np.linalg.pinv(H) @ observations[0]
    P = np.eye(n)
    estimates = []
    for y in observations:
        x_prior = A @ x
        P_prior = A @ P @ A.T + Q
        K = P_prior @ H.T @ np.linalg.inv(H @ P_prior @ H.T + R)
        x = x_prior + K @ (y - H @ x_prior)
        P = (np.eye(n) - K @ H) @ P_prior
        estimates.append(x)
    return np.array(estimates)


def test_kalman_matches_dense_reference():
    model = _random_system()
    trajectory = simulate(model, np.ones(4), 100, NoiseGenerator(9))
    estimates, gains = run_kalman(model, trajectory.observations)
    reference = _dense_kalman(model.A, model.H, model.Q, model.R_obs, trajectory.observations)
    assert estimates.shape == (100, 4)
    assert gains.shape == (100, 4, 2)
    assert np.max(np.abs(estimates - reference)) < 1e-9


def test_gain_converges_on_stationary_system():
    model = StateSpaceModel.linear(np.eye(1), np.eye(1), 0.01 * np.eye(1), 0.25 * np.eye(1), 0.01)
    trajectory = simulate(model, np.zeros(1), 500, NoiseGenerator(1))
    _, gains = run_kalman(model, trajectory.observations)
    deltas = np.max(np.abs(np.diff(gains, axis=0)), axis=(1, 2))
    assert deltas[-1] < 1e-8
    np.testing.assert_allclose(gains[-1], riccati_gain(model), atol=1e-9)


def test_riccati_gain_for_constant_velocity():
    model = StateSpaceModel.constant_velocity(0.01, [1e-4, 1e-4, 1e-2, 1e-2], [0.25, 0.25])
    trajectory = simulate(model, np.zeros(4), 3000, NoiseGenerator(2))
    _, gains = run_kalman(model, trajectory.observations)
    np.testing.assert_allclose(gains[-1], riccati_gain(model), atol=1e-6)
    assert riccati_gain(model).shape == (4, 2)


def test_riccati_gain_rejects_lorenz():
    model = StateSpaceModel.lorenz(np.array([[1.0, 0.0, 0.0]]), 0.1 * np.eye(3), np.eye(1), 0.01)
    with pytest.raises(ContractViolation):
        riccati_gain(model)


def test_initial_state_from_first_observation():
    model = StateSpaceModel.constant_velocity(0.1, [0.0] * 4, [1.0, 1.0])
    state = initial_state(model, [3.0, -2.0])
    np.testing.assert_allclose(state.x, [3.0, -2.0, 0.0, 0.0])
    np.testing.assert_array_equal(state.P, np.eye(4))
    with pytest.raises(ContractViolation):
        initial_state(model, [1.0, 2.0, 3.0])


def test_predict_with_explicit_mean():
    state = KalmanState.initial(np.array([1.0, 2.0]), np.eye(2))
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    predicted = kf_predict(state, A, 0.5 * np.eye(2), mean=np.array([7.0, 8.0]))
    np.testing.assert_array_equal(predicted.x_prior, [7.0, 8.0])
    np.testing.assert_allclose(predicted.P_prior, A @ A.T + 0.5 * np.eye(2))
    np.testing.assert_array_equal(predicted.x, state.x)


def test_update_with_zero_gain_keeps_prior():
    state = kf_predict(KalmanState.initial(np.array([1.0, 2.0]), np.eye(2)), np.eye(2), np.eye(2))
    updated = kf_update(state, np.zeros((2, 1)), [10.0], np.array([[1.0, 0.0]]))
    np.testing.assert_array_equal(updated.x, state.x_prior)
    np.testing.assert_array_equal(updated.P, state.P_prior)


def test_gain_ridge_fallback(caplog):
    with caplog.at_level('WARNING'):
        K = kf_gain(np.zeros((2, 2)), np.array([[1.0, 0.0]]), np.zeros((1, 1)))
    np.testing.assert_array_equal(K, np.zeros((2, 1)))
    assert 'ridge' in caplog.text


def test_gain_singular_after_ridge():
    with pytest.raises(NumericalError) as info:
        kf_gain(-np.eye(2), np.eye(2), np.zeros((2, 2)))
    assert info.value.condition == pytest.approx(1.0)


def test_gain_shape_contract():
    with pytest.raises(ContractViolation):
        kf_gain(np.eye(3), np.eye(2), np.eye(2))
    with pytest.raises(ContractViolation):
        kf_gain(np.eye(2), np.eye(2), np.eye(3))


def test_ekf_jacobian_matches_finite_difference():
    model = StateSpaceModel.lorenz(np.array([[1.0, 0.0, 0.0]]), 0.1 * np.eye(3), np.eye(1), 0.01)
    x = np.array([1.5, -2.0, 20.0])
    J = ekf_jacobian(model, x)
    eps = 1e-6
    numeric = np.column_stack([
        (model.predict_mean(x + eps * e) - model.predict_mean(x - eps * e)) / (2 * eps) for e in np.eye(3)
    ])
    np.testing.assert_allclose(J, numeric, atol=1e-6)
    with pytest.raises(ContractViolation):
        ekf_jacobian(StateSpaceModel.constant_velocity(0.1, [0.0] * 4, [1.0, 1.0]), np.zeros(4))


def test_ekf_tracks_lorenz_better_than_raw_observation():
    model = StateSpaceModel.lorenz(np.array([[1.0, 0.0, 0.0]]), 0.1 * np.eye(3), np.eye(1), 0.01)
    trajectory = simulate(model, np.ones(3), 1000, NoiseGenerator(4))
    estimates, _ = run_kalman(model, trajectory.observations)
    assert np.all(np.isfinite(estimates))
    ekf_error = np.mean(np.abs(estimates[200:, 0] - trajectory.truth[200:, 0]))
    obs_error = np.mean(np.abs(trajectory.observations[200:, 0] - trajectory.truth[200:, 0]))
    assert ekf_error < obs_error


def test_ekf_step_uses_euler_mean():
    model = StateSpaceModel.lorenz(np.array([[1.0, 0.0, 0.0]]), 0.1 * np.eye(3), np.eye(1), 0.01)
    state = KalmanState.initial(np.array([1.0, 1.0, 1.0]), np.eye(3))
    updated, K = kf_step(state, model, [1.2])
    np.testing.assert_allclose(updated.x_prior, model.predict_mean(state.x))
    assert K.shape == (3, 1)


def test_kalman_filter_wrapper_matches_run():
    model = _random_system(seed=3)
    trajectory = simulate(model, np.zeros(4), 30, NoiseGenerator(3))
    kf = KalmanFilter(model)
    stepped = np.array([kf.step(y)[0] for y in trajectory.observations])
    estimates, _ = run_kalman(model, trajectory.observations)
    np.testing.assert_array_equal(stepped, estimates)


def test_joseph_form_agrees_with_short_form_for_exact_gain():
    rng = np.random.default_rng(11)
    model = _random_system(seed=11)
    B = rng.normal(size=(4, 4))
    P_prior = B @ B.T + 0.1 * np.eye(4)
    K = kf_gain(P_prior, model.H, model.R_obs)
    I_KH = np.eye(4) - K @ model.H
    joseph = I_KH @ P_prior @ I_KH.T + K @ model.R_obs @ K.T
    np.testing.assert_allclose(joseph, I_KH @ P_prior, atol=1e-8)


@pytest.mark.parametrize('scenario', ['linear_motion', 'lorenz'])
def test_covariance_stays_positive_semidefinite(scenario):
    built = build_scenario(ScenarioConfig.default(scenario, seed=2))
    observations = built.trajectory.observations[:3000]
    assert len(observations) == 3000
    kf = KalmanFilter(built.model)
    lowest = np.inf
    for y in observations:
        kf.step(y)
        lowest = min(lowest, np.linalg.eigvalsh(kf.state.P).min(), np.linalg.eigvalsh(kf.state.P_prior).min())
    assert lowest >= -1e-10


@pytest.mark.parametrize('scenario', ['linear_motion', 'lorenz'])
def test_untrusted_observations_leave_prior_unchanged(scenario):
    built = build_scenario(ScenarioConfig.default(scenario, seed=5))
    model = built.model.scaled(1.0, 1e12)
    kf = KalmanFilter(model)
    for y in built.trajectory.observations[:50]:
        kf.step(y)
        state = kf.state
        assert np.linalg.norm(state.x - state.x_prior) <= 1e-6 * np.linalg.norm(state.x_prior)
        np.testing.assert_allclose(state.P, state.P_prior, rtol=1e-6, atol=1e-12)


def _rk4_flow_jacobian(x, dt, eps=1e-5):
    return np.column_stack([
        (rk4_step(lorenz_derivative, x + eps * e, dt) - rk4_step(lorenz_derivative, x - eps * e, dt)) / (2 * eps)
        for e in np.eye(3)
    ])


def test_ekf_transition_is_second_order_close_to_rk4_flow():
    rng = np.random.default_rng(8)
    points = rng.uniform([-15.0, -20.0, 10.0], [15.0, 20.0, 40.0], size=(10, 3))
    H = np.array([[1.0, 0.0, 0.0]])
    for x in points:
        errors = []
        for dt in (0.01, 0.005):
            model = StateSpaceModel.lorenz(H, 0.1 * np.eye(3), np.eye(1), dt)
            errors.append(np.abs(ekf_jacobian(model, x) - _rk4_flow_jacobian(x, dt)).max())
        # 一阶展开的截断误差量级为 dt²·(‖J‖² + ‖f‖)
        scale = np.abs(lorenz_jacobian(x)).sum(axis=1).max() ** 2 + np.abs(lorenz_derivative(x)).max()
        assert errors[0] <= 0.01 ** 2 * scale
        assert errors[0] / errors[1] > 2.5
