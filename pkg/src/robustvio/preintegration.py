"""IMU preintegration between keyframes and the inertial residual.

Residual layout is ``(d_alpha, d_beta, d_theta)``; orientation states are
perturbed on the left (``q <- exp(d) * q``) so Jacobian columns for a body
state are ordered ``(p, v, theta)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import quat_canonical, quat_conj, quat_mul, quat_to_rot, skew

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class ImuSample:
    t_ns: int
    gyro: np.ndarray
    accel: np.ndarray


@dataclass
class PreintegrationBuffer:
    """IMU samples spanning one keyframe interval, both boundary samples included.

    The first sample sits at the earlier keyframe time; the samples strictly
    after it form the inter-frame set used for the attention weight.
    """

    t_ns: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        self.t_ns = np.asarray(self.t_ns, dtype=np.int64)
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        if not (len(self.t_ns) == len(self.gyro) == len(self.accel)):
            raise ValueError("buffer columns have different lengths")

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        return cls(
            np.array([s.t_ns for s in samples], dtype=np.int64),
            np.array([s.gyro for s in samples]),
            np.array([s.accel for s in samples]),
        )

    def __len__(self):
        return len(self.t_ns)


@dataclass(frozen=True)
class PreintegratedDelta:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    cov: np.ndarray
    dt: float


@dataclass
class BodyState:
    """Body pose and velocity in the world frame."""

    p: np.ndarray
    v: np.ndarray
    q: np.ndarray

    def copy(self):
        return BodyState(self.p.copy(), self.v.copy(), self.q.copy())


def propagate(buffer: PreintegrationBuffer, gyro_noise=1e-3, accel_noise=1e-2) -> PreintegratedDelta:
    """Integrate a buffer into ``(alpha, beta, gamma)`` with midpoint steps.

    Noise densities are continuous-time (rad/s/sqrt(Hz), m/s^2/sqrt(Hz)).
    A single-sample buffer yields the identity increment with zero elapsed time.
    """
    if len(buffer) == 0:
        raise ValueError("cannot preintegrate an empty buffer")
    dt_ns = np.diff(buffer.t_ns)
    if np.any(dt_ns <= 0):
        raise ValueError("IMU timestamps must be strictly increasing")
    dt = dt_ns.astype(float) * 1e-9
    if dt.size == 0:
        return PreintegratedDelta(np.zeros(3), np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]), np.zeros((9, 9)), 0.0)
    alpha, beta, q, cov = kernels.preintegrate(dt, buffer.gyro, buffer.accel, float(gyro_noise), float(accel_noise))
    return PreintegratedDelta(alpha, beta, q, cov, float(dt.sum()))


def compose(d01: PreintegratedDelta, d12: PreintegratedDelta) -> PreintegratedDelta:
    """Chain two consecutive increments (covariance is not composed)."""
    R01 = quat_to_rot(d01.gamma)
    gamma = quat_mul(d01.gamma, d12.gamma)
    beta = d01.beta + R01 @ d12.beta
    alpha = d01.alpha + d01.beta * d12.dt + R01 @ d12.alpha
    return PreintegratedDelta(alpha, beta, gamma / np.linalg.norm(gamma), np.full((9, 9), np.nan), d01.dt + d12.dt)


def predict_state(state: BodyState, delta: PreintegratedDelta, gravity=GRAVITY) -> BodyState:
    """State at the end of the interval implied by the increment."""
    R = quat_to_rot(state.q)
    dt = delta.dt
    p = state.p + state.v * dt + 0.5 * gravity * dt * dt + R @ delta.alpha
    v = state.v + gravity * dt + R @ delta.beta
    q = quat_mul(state.q, delta.gamma)
    return BodyState(p, v, q / np.linalg.norm(q))


def _theta_error(qk, qk1, gamma):
    e = quat_mul(quat_mul(quat_conj(qk), qk1), quat_conj(gamma))
    return quat_canonical(e)


def imu_residual(delta: PreintegratedDelta, sk: BodyState, sk1: BodyState, gravity=GRAVITY):
    """9-vector ``(d_alpha, d_beta, d_theta)`` between two body states.

    ``gravity`` is the world gravitational acceleration, so the position row
    reads ``R_k^T (p1 - p0 - v0 dt - 0.5 g dt^2) - alpha``.
    """
    dt = delta.dt
    Rt = quat_to_rot(sk.q).T
    r = np.empty(9)
    r[0:3] = Rt @ (sk1.p - sk.p - sk.v * dt - 0.5 * gravity * dt * dt) - delta.alpha
    r[3:6] = Rt @ (sk1.v - sk.v - gravity * dt) - delta.beta
    r[6:9] = 2.0 * _theta_error(sk.q, sk1.q, delta.gamma)[1:]
    return r


def residual_jacobians(delta: PreintegratedDelta, sk: BodyState, sk1: BodyState, gravity=GRAVITY):
    """Jacobians of :func:`imu_residual` w.r.t. ``(p, v, theta)`` of both states.

    Returns ``(J_k, J_k1)``, each 9x9 with columns ``(p, v, theta)``.
    """
    dt = delta.dt
    Rt = quat_to_rot(sk.q).T
    d_alpha = sk1.p - sk.p - sk.v * dt - 0.5 * gravity * dt * dt
    d_beta = sk1.v - sk.v - gravity * dt
    e = _theta_error(sk.q, sk1.q, delta.gamma)
    L = e[0] * np.eye(3) - skew(e[1:])

    Jk = np.zeros((9, 9))
    Jk1 = np.zeros((9, 9))
    Jk[0:3, 0:3] = -Rt
    Jk[0:3, 3:6] = -Rt * dt
    Jk[0:3, 6:9] = Rt @ skew(d_alpha)
    Jk[3:6, 3:6] = -Rt
    Jk[3:6, 6:9] = Rt @ skew(d_beta)
    Jk[6:9, 6:9] = -L @ Rt
    Jk1[0:3, 0:3] = Rt
    Jk1[3:6, 3:6] = Rt
    Jk1[6:9, 6:9] = L @ Rt
    return Jk, Jk1


def sqrt_information(cov, block_id=None, eps=1e-12):
    """Lower-triangular ``L`` with ``L^T L = cov^-1``; raises on non-PSD input."""
    cov = 0.5 * (cov + cov.T)
    w = np.linalg.eigvalsh(cov)
    if w.min() < -1e-10 * max(1.0, abs(w.max())):
        raise np.linalg.LinAlgError(f"covariance of block {block_id} is not positive semidefinite")
    C = np.linalg.cholesky(cov + eps * np.eye(cov.shape[0]))
    return np.linalg.inv(C)
