"""
Reference Kalman / extended Kalman filter.

Predict:  x̂ = A·x,   P̂ = A·P·Aᵀ + Q
Gain:     K = P̂·Hᵀ·(H·P̂·Hᵀ + R)⁻¹
Update:   x = x̂ + K·(y − H·x̂),   P = (I − K·H)·P̂
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg

from Spikekal.Errors import ContractViolation, NumericalError
from Spikekal.StateSpace import StateSpaceModel, LORENZ_SIGMA, LORENZ_RHO, LORENZ_BETA
from Spikekal.Utils import Matrix, Vector, as_matrix, as_vector, symmetrize


logger = logging.getLogger(__name__)

GainMatrix = Matrix

RIDGE_FACTOR = 1e-12


@dataclass(frozen=True, eq=False)
class KalmanState:
    x: Vector
    P: Matrix
    x_prior: Vector
    P_prior: Matrix

    @staticmethod
    def initial(x0, P0) -> KalmanState:
        x0 = as_vector(x0, name='x0')
        P0 = symmetrize(as_matrix(P0, (x0.shape[0], x0.shape[0]), 'P0'))
        return KalmanState(x=x0, P=P0, x_prior=x0.copy(), P_prior=P0.copy())

    @property
    def n(self) -> int:
        return self.x.shape[0]


def initial_state(model: StateSpaceModel, y0, P0: Optional[Matrix] = None) -> KalmanState:
    """x0 = H⁺·y0 (zeros for unobserved dimensions), P0 = I unless given."""
    y0 = as_vector(y0, model.m, 'y0')
    x0 = np.linalg.pinv(model.H) @ y0
    if P0 is None:
        P0 = np.eye(model.n)
    return KalmanState.initial(x0, P0)


def check_gain(K: GainMatrix) -> bool:
    return bool(np.all(np.isfinite(K)))


def kf_predict(state: KalmanState, A: Matrix, Q: Matrix, mean: Optional[Vector] = None) -> KalmanState:
    """
    Time update. `mean` overrides A·x for models whose mean propagation is
    nonlinear (the EKF passes the Euler map, A is then the linearisation).
    """
    n = state.n
    A = as_matrix(A, (n, n), 'A')
    Q = as_matrix(Q, (n, n), 'Q')
    x_prior = A @ state.x if mean is None else as_vector(mean, n, 'mean')
    P_prior = symmetrize(A @ state.P @ A.T + Q)
    return replace(state, x_prior=x_prior, P_prior=P_prior)


def kf_gain(P_prior: Matrix, H: Matrix, R_obs: Matrix) -> GainMatrix:
    P_prior = as_matrix(P_prior, name='P_prior')
    n = P_prior.shape[0]
    H = as_matrix(H, name='H')
    if H.shape[1] != n:
        raise ContractViolation(f"H has {H.shape[1]} columns, state has {n}")
    m = H.shape[0]
    R_obs = as_matrix(R_obs, (m, m), 'R_obs')

    S = symmetrize(H @ P_prior @ H.T + R_obs)
    PHt = P_prior @ H.T
    # K·S = P̂·Hᵀ  →  S·Kᵀ = H·P̂ (S 对称)
    try:
        factor = scipy.linalg.cho_factor(S, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        ridge = RIDGE_FACTOR * max(float(np.trace(S)), 1.0)
        logger.warning("innovation covariance not positive definite, adding ridge %.3e", ridge)
        try:
            factor = scipy.linalg.cho_factor(S + ridge * np.eye(m), lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            raise NumericalError("singular innovation covariance", condition=float(np.linalg.cond(S))) from None
    K = scipy.linalg.cho_solve(factor, PHt.T).T
    if not np.all(np.isfinite(K)):
        raise NumericalError("non-finite Kalman gain", condition=float(np.linalg.cond(S)))
    return K


def kf_update(state: KalmanState, K: GainMatrix, y, H: Matrix) -> KalmanState:
    n = state.n
    H = as_matrix(H, name='H')
    m = H.shape[0]
    if H.shape[1] != n:
        raise ContractViolation(f"H has {H.shape[1]} columns, state has {n}")
    K = as_matrix(K, (n, m), 'K')
    y = as_vector(y, m, 'y')
    x = state.x_prior + K @ (y - H @ state.x_prior)
    P = symmetrize((np.eye(n) - K @ H) @ state.P_prior)
    return replace(state, x=x, P=P)


def lorenz_jacobian(x: Vector) -> Matrix:
    x = as_vector(x, 3, 'x')
    x1, x2, x3 = x
    return np.array([
        [-LORENZ_SIGMA, LORENZ_SIGMA, 0.0],
        [LORENZ_RHO - x3, -1.0, -x1],
        [x2, x1, -LORENZ_BETA],
    ])


def ekf_jacobian(model: StateSpaceModel, x: Vector) -> Matrix:
    """Discrete transition I + dt·J(x) of the Lorenz flow."""
    if model.kind != 'lorenz':
        raise ContractViolation("ekf_jacobian applies to lorenz models only")
    return np.eye(3) + model.dt * lorenz_jacobian(x)


def transition_matrix(model: StateSpaceModel, x: Vector) -> Matrix:
    if model.kind == 'linear':
        return model.A
    return ekf_jacobian(model, x)


def kf_step(state: KalmanState, model: StateSpaceModel, y) -> tuple[KalmanState, GainMatrix]:
    A = transition_matrix(model, state.x)
    mean = None if model.kind == 'linear' else model.predict_mean(state.x)
    predicted = kf_predict(state, A, model.Q, mean)
    K = kf_gain(predicted.P_prior, model.H, model.R_obs)
    return kf_update(predicted, K, y, model.H), K


def riccati_gain(model: StateSpaceModel) -> GainMatrix:
    """Steady-state gain from the discrete algebraic Riccati equation (linear models)."""
    if model.kind != 'linear':
        raise ContractViolation("the steady-state gain is defined for linear models only")
    # DARE in the filtering form: P̂ = A P̂ Aᵀ − A P̂ Hᵀ (H P̂ Hᵀ + R)⁻¹ H P̂ Aᵀ + Q
    P_prior = scipy.linalg.solve_discrete_are(model.A.T, model.H.T, model.Q, model.R_obs)
    return kf_gain(P_prior, model.H, model.R_obs)


class KalmanFilter:
    """Stateful wrapper used by the harness: one `step` per observation."""

    def __init__(self, model: StateSpaceModel, P0: Optional[Matrix] = None):
        self.model = model
        self.P0 = P0
        self.state: Optional[KalmanState] = None

    def step(self, y) -> tuple[Vector, GainMatrix]:
        if self.state is None:
            self.state = initial_state(self.model, y, self.P0)
        self.state, K = kf_step(self.state, self.model, y)
        return self.state.x, K


def run_kalman(model: StateSpaceModel, observations: Matrix, P0: Optional[Matrix] = None) -> tuple[Matrix, np.ndarray]:
    """Filter a whole observation sequence; returns (estimates T×n, gains T×n×m)."""
    observations = np.atleast_2d(observations)
    kf = KalmanFilter(model, P0)
    estimates = np.empty((observations.shape[0], model.n))
    gains = np.empty((observations.shape[0], model.n, model.m))
    for k, y in enumerate(observations):
        estimates[k], gains[k] = kf.step(y)
    return estimates, gains
