"""Analytic ground-truth trajectories sampled at the IMU rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from ..geometry import rot_to_quat, rot_zyx

NS = 1_000_000_000


class ConfigurationError(ValueError):
    pass


@dataclass
class TrajectorySpec:
    kind: str = "circle"
    duration: float = 60.0
    imu_rate: int = 200
    cam_rate: int = 10
    seed: int = 0
    radius: float = 5.0
    angular_speed: float = 0.4
    height: float = 1.0
    vertical_amplitude: float = 0.0
    vertical_frequency: float = 0.2
    tilt_amplitude: float = 0.0
    tilt_frequency: float = 0.3
    waypoints: list = field(default_factory=list)

    def validate(self):
        if self.duration <= 0:
            raise ConfigurationError("duration must be positive")
        if self.imu_rate < self.cam_rate or self.cam_rate <= 0:
            raise ConfigurationError("imu_rate must be >= cam_rate > 0")
        if self.imu_rate % self.cam_rate:
            raise ConfigurationError("imu_rate must be an integer multiple of cam_rate")
        if NS % self.imu_rate:
            raise ConfigurationError("imu_rate must divide 1e9 so sample times are integral ns")


@dataclass
class GroundTruth:
    """States at the IMU rate.

    ``omega`` is the body angular rate (rad/s, body frame) and ``acc`` the
    world-frame kinematic acceleration (gravity excluded).
    """

    t_ns: np.ndarray
    p: np.ndarray
    v: np.ndarray
    acc: np.ndarray
    q: np.ndarray
    omega: np.ndarray
    cam_stride: int

    @property
    def t(self):
        return self.t_ns * 1e-9

    def __len__(self):
        return len(self.t_ns)

    def frame_indices(self):
        return np.arange(0, len(self.t_ns), self.cam_stride)


def _euler_rates_to_body(yaw_d, pitch, pitch_d, roll, roll_d):
    # body rates for R = Rz(yaw) Ry(pitch) Rx(roll)
    sp, cp = np.sin(pitch), np.cos(pitch)
    sr, cr = np.sin(roll), np.cos(roll)
    wx = roll_d - yaw_d * sp
    wy = pitch_d * cr + yaw_d * sr * cp
    wz = -pitch_d * sr + yaw_d * cr * cp
    return np.stack([wx, wy, wz], axis=-1)


def _heading_from_velocity(v, a):
    yaw = np.arctan2(v[:, 1], v[:, 0])
    speed2 = v[:, 0] ** 2 + v[:, 1] ** 2
    if np.any(speed2 < 1e-12):
        raise ConfigurationError("heading-following trajectory has zero horizontal speed")
    yaw_d = (v[:, 0] * a[:, 1] - v[:, 1] * a[:, 0]) / speed2
    return np.unwrap(yaw), yaw_d


def generate_trajectory(spec: TrajectorySpec) -> GroundTruth:
    """Sample a C^2-smooth trajectory with analytic derivatives."""
    spec.validate()
    n = int(round(spec.duration * spec.imu_rate)) + 1
    step = NS // spec.imu_rate
    t_ns = np.arange(n, dtype=np.int64) * step
    t = t_ns * 1e-9
    z0 = spec.height
    Az, fz = spec.vertical_amplitude, spec.vertical_frequency
    wz = 2 * math.pi * fz
    pz = z0 + Az * np.sin(wz * t)
    vz = Az * wz * np.cos(wz * t)
    az = -Az * wz * wz * np.sin(wz * t)

    kind = spec.kind
    if kind == "stationary":
        p = np.column_stack([np.zeros(n), np.zeros(n), np.full(n, z0)])
        v = np.zeros((n, 3))
        a = np.zeros((n, 3))
        yaw = np.zeros(n)
        yaw_d = np.zeros(n)
    elif kind == "circle":
        r, w = spec.radius, spec.angular_speed
        th = w * t
        p = np.column_stack([r * np.cos(th), r * np.sin(th), pz])
        v = np.column_stack([-r * w * np.sin(th), r * w * np.cos(th), vz])
        a = np.column_stack([-r * w * w * np.cos(th), -r * w * w * np.sin(th), az])
        # body x along the direction of travel
        yaw = th + math.pi / 2 * (1.0 if w >= 0 else -1.0)
        yaw_d = np.full(n, w)
    elif kind == "figure-eight":
        r, w = spec.radius, spec.angular_speed
        th = w * t
        p = np.column_stack([r * np.sin(th), r * np.sin(th) * np.cos(th), pz])
        v = np.column_stack([r * w * np.cos(th), r * w * np.cos(2 * th), vz])
        a = np.column_stack([-r * w * w * np.sin(th), -2 * r * w * w * np.sin(2 * th), az])
        yaw, yaw_d = _heading_from_velocity(v, a)
    elif kind == "waypoint-spline":
        wp = np.asarray(spec.waypoints, dtype=float).reshape(-1, 2)
        if len(wp) < 3:
            raise ConfigurationError("waypoint-spline needs at least 3 waypoints")
        closed = np.vstack([wp, wp[:1]])
        knots = np.linspace(0.0, spec.duration, len(closed))
        cs = CubicSpline(knots, closed, bc_type="periodic")
        p = np.column_stack([cs(t), pz])
        v = np.column_stack([cs(t, 1), vz])
        a = np.column_stack([cs(t, 2), az])
        yaw, yaw_d = _heading_from_velocity(v, a)
    else:
        raise ConfigurationError(f"unsupported trajectory kind {kind!r}")

    At, ft = spec.tilt_amplitude, spec.tilt_frequency
    wt = 2 * math.pi * ft
    roll = At * np.sin(wt * t)
    roll_d = At * wt * np.cos(wt * t)
    pitch = 0.5 * At * np.sin(0.7 * wt * t + 0.3)
    pitch_d = 0.5 * At * 0.7 * wt * np.cos(0.7 * wt * t + 0.3)

    q = np.array([rot_to_quat(rot_zyx(y, pi, ro)) for y, pi, ro in zip(yaw, pitch, roll)])
    omega = _euler_rates_to_body(yaw_d, pitch, pitch_d, roll, roll_d)
    return GroundTruth(t_ns, p, v, a, q, omega, spec.imu_rate // spec.cam_rate)
