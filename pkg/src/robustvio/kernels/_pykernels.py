"""Pure numpy implementations of the hot kernels (fallback when the compiled core is absent)."""

import math

import numpy as np


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _qmul(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def _qexp(phi):
    theta = math.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    if theta < 1e-8:
        q = np.array([1.0 - theta * theta / 8.0, 0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2]])
        return q / np.linalg.norm(q)
    s = math.sin(0.5 * theta) / theta
    return np.array([math.cos(0.5 * theta), s * phi[0], s * phi[1], s * phi[2]])


def _qrot(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def preintegrate(dt, gyro, accel, gyro_noise, accel_noise):
    """Midpoint preintegration of ``len(dt)`` intervals.

    ``gyro``/``accel`` hold ``len(dt) + 1`` samples; interval ``n`` spans
    samples ``n`` and ``n + 1``. Returns ``(alpha, beta, q, cov)`` with the
    9x9 covariance ordered (alpha, beta, theta) and theta a left perturbation.
    """
    dt = np.asarray(dt, dtype=float)
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    alpha = np.zeros(3)
    beta = np.zeros(3)
    q = np.array([1.0, 0.0, 0.0, 0.0])
    R = np.eye(3)
    P = np.zeros((9, 9))
    A = np.eye(9)
    B = np.zeros((9, 6))
    I3 = np.eye(3)
    for n in range(dt.shape[0]):
        h = dt[n]
        w_mid = 0.5 * (gyro[n] + gyro[n + 1])
        q_next = _qmul(q, _qexp(w_mid * h))
        q_next /= np.linalg.norm(q_next)
        R_next = _qrot(q_next)
        f0 = R @ accel[n]
        f1 = R_next @ accel[n + 1]
        f_mid = 0.5 * (f0 + f1)
        # first-order error-state transition
        Sf = _skew(f0)
        A[0:3, 3:6] = I3 * h
        A[0:3, 6:9] = -0.5 * h * h * Sf
        A[3:6, 6:9] = -h * Sf
        B[0:3, 3:6] = 0.5 * h * h * R
        B[3:6, 3:6] = h * R
        B[6:9, 0:3] = h * R_next
        qg = gyro_noise * gyro_noise / h
        qa = accel_noise * accel_noise / h
        Q = np.diag([qg, qg, qg, qa, qa, qa])
        P = A @ P @ A.T + B @ Q @ B.T
        alpha = alpha + beta * h + 0.5 * f_mid * h * h
        beta = beta + f_mid * h
        q = q_next
        R = R_next
    P = 0.5 * (P + P.T)
    return alpha, beta, q, P


def sampson_distances(F, x1, x2):
    """Sampson distance (pixels) of correspondences ``x1 -> x2`` under ``F``."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    n = x1.shape[0]
    h1 = np.hstack([x1, np.ones((n, 1))])
    h2 = np.hstack([x2, np.ones((n, 1))])
    Fx1 = h1 @ F.T
    Ftx2 = h2 @ F
    num = np.einsum("ij,ij->i", h2, Fx1)
    den = Fx1[:, 0] ** 2 + Fx1[:, 1] ** 2 + Ftx2[:, 0] ** 2 + Ftx2[:, 1] ** 2
    return np.abs(num) / np.sqrt(np.maximum(den, 1e-300))
