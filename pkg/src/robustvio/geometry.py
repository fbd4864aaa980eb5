"""SO(3)/SE(3) helpers and robust losses used by every estimator in the package.

Conventions
-----------
* Quaternions are Hamilton, scalar-first ``[w, x, y, z]`` numpy arrays.
* ``q_wb`` rotates body-frame vectors into the world frame: ``v_w = R(q_wb) v_b``.
* Orientation perturbations are applied on the left: ``q <- exp(dtheta) * q``.
* All angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])

_SMALL_ANGLE = 1e-8


def _check_finite(v, name="input"):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite, got {v!r}")
    return v


def skew(v):
    """Cross-product matrix ``[v]x`` with ``skew(a) @ b == cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-15:
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def quat_canonical(q):
    """Return the representative of ``q`` with non-negative scalar part."""
    q = np.asarray(q, dtype=float)
    return -q if q[0] < 0.0 else q


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_inv(q):
    return quat_conj(q) / float(np.dot(q, q))


def quat_mul(a, b):
    """Hamilton product ``a * b``."""
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


def quat_to_rot(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_to_quat(R):
    """Rotation matrix to unit quaternion (Shepperd's method), canonical sign."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    return quat_canonical(quat_normalize(q))


def quat_rotate(q, v):
    return quat_to_rot(q) @ np.asarray(v, dtype=float)


def so3_exp(phi):
    """Rotation vector (radians) to unit quaternion."""
    phi = _check_finite(phi, "rotation vector")
    theta = float(np.linalg.norm(phi))
    if theta < _SMALL_ANGLE:
        # second-order Taylor; normalized so the unit invariant holds exactly
        q = np.array([1.0 - theta * theta / 8.0, *(0.5 * phi)])
        return q / np.linalg.norm(q)
    half = 0.5 * theta
    return np.array([math.cos(half), *(math.sin(half) / theta * phi)])


def so3_log(q):
    """Unit quaternion to the minimal-angle rotation vector."""
    q = quat_canonical(_check_finite(q, "quaternion"))
    w = q[0]
    v = q[1:]
    vn = float(np.linalg.norm(v))
    if vn < _SMALL_ANGLE:
        return 2.0 * v / w
    theta = 2.0 * math.atan2(vn, w)
    return theta / vn * v


def so3_exp_mat(phi):
    """Rodrigues formula, rotation vector to matrix."""
    phi = _check_finite(phi, "rotation vector")
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + math.sin(theta) / theta * K + (1.0 - math.cos(theta)) / theta**2 * K @ K


def so3_log_mat(R):
    return so3_log(rot_to_quat(R))


def so3_left_jacobian_inv(phi):
    """``J_l^{-1}(phi)`` so that ``log(exp(d) exp(phi)) ~ phi + J_l^{-1}(phi) d``."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * K + K @ K / 12.0
    c = 1.0 / theta**2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) - 0.5 * K + c * K @ K


def quats_to_rots(Q):
    """Batch version of :func:`quat_to_rot` for an (N, 4) array."""
    Q = np.asarray(Q, dtype=float).reshape(-1, 4)
    w, x, y, z = Q.T
    R = np.empty((len(Q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def skew_batch(V):
    V = np.asarray(V, dtype=float)
    S = np.zeros(V.shape[:-1] + (3, 3))
    S[..., 0, 1] = -V[..., 2]
    S[..., 0, 2] = V[..., 1]
    S[..., 1, 0] = V[..., 2]
    S[..., 1, 2] = -V[..., 0]
    S[..., 2, 0] = -V[..., 1]
    S[..., 2, 1] = V[..., 0]
    return S


def omega_matrix(w):
    """4x4 quaternion-rate matrix ``[[-[w]x, w], [-w^T, 0]]``.

    Acts on vector-first quaternions ``[x, y, z, w]`` so that
    ``dq/dt = 0.5 * omega_matrix(w) @ q`` is right multiplication by the
    body rate, i.e. ``0.5 * q * (0, w)`` in Hamilton algebra.
    """
    w = _check_finite(w, "angular rate")
    out = np.zeros((4, 4))
    out[:3, :3] = -skew(w)
    out[:3, 3] = w
    out[3, :3] = -w
    return out


def huber(s, variant="standard"):
    """Robust norm applied to a squared residual ``s``.

    ``standard`` is linear below 1 and ``2*sqrt(s) - 1`` above.
    ``swapped`` exchanges the two cases (``2*sqrt(s) - 1`` below
    1, constant 1 above); it exists only for comparison runs.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0.0) or not np.all(np.isfinite(s_arr)):
        raise ValueError(f"huber expects finite s >= 0, got {s!r}")
    if variant == "standard":
        out = np.where(s_arr < 1.0, s_arr, 2.0 * np.sqrt(np.maximum(s_arr, 1.0)) - 1.0)
    elif variant == "swapped":
        out = np.where(s_arr >= 1.0, 1.0, 2.0 * np.sqrt(s_arr) - 1.0)
    else:
        raise ValueError(f"unknown huber variant {variant!r}")
    return float(out) if np.ndim(out) == 0 else out


def huber_weight(s, variant="standard"):
    """First derivative of :func:`huber` with respect to ``s`` (IRLS weight)."""
    s_arr = np.asarray(s, dtype=float)
    if variant == "standard":
        out = np.where(s_arr < 1.0, 1.0, 1.0 / np.sqrt(np.maximum(s_arr, 1.0)))
    elif variant == "swapped":
        out = np.where(s_arr >= 1.0, 0.0, 1.0 / np.sqrt(np.maximum(s_arr, 1e-12)))
    else:
        raise ValueError(f"unknown huber variant {variant!r}")
    return float(out) if np.ndim(out) == 0 else out


def euler_zyx(R):
    """Return ``(yaw, pitch, roll)`` with ``R = Rz(yaw) Ry(pitch) Rx(roll)``."""
    yaw = math.atan2(R[1, 0], R[0, 0])
    pitch = -math.asin(max(-1.0, min(1.0, R[2, 0])))
    roll = math.atan2(R[2, 1], R[2, 2])
    return yaw, pitch, roll


def rot_zyx(yaw, pitch, roll):
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return Rz @ Ry @ Rx


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass
class Pose:
    """Rigid transform ``T_ab``: rotation ``q`` and translation ``p`` (meters)."""

    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.q = quat_normalize(self.q)
        self.p = np.asarray(self.p, dtype=float).reshape(3)

    @property
    def R(self):
        return quat_to_rot(self.q)

    def inverse(self):
        qi = quat_conj(self.q)
        return Pose(qi, -quat_rotate(qi, self.p))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(quat_mul(self.q, other.q), self.p + quat_rotate(self.q, other.p))

    def transform(self, pts):
        pts = np.asarray(pts, dtype=float)
        return pts @ self.R.T + self.p

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.p
        return T

    @classmethod
    def from_matrix(cls, T):
        return cls(rot_to_quat(T[:3, :3]), T[:3, 3])
