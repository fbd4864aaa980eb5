"""Raw IMU synthesis: calibration errors, drifting biases and white noise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import quat_to_rot
from ..preintegration import GRAVITY
from .trajectory import ConfigurationError, GroundTruth


def _eye():
    return np.eye(3)


@dataclass
class ImuNoiseModel:
    gyro_scale: np.ndarray = field(default_factory=_eye)
    gyro_misalignment: np.ndarray = field(default_factory=_eye)
    accel_scale: np.ndarray = field(default_factory=_eye)
    accel_misalignment: np.ndarray = field(default_factory=_eye)
    gyro_bias_init: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias_init: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_white_sigma: float = 1e-3
    accel_white_sigma: float = 1e-2
    gyro_walk_sigma: float = 1e-4
    accel_walk_sigma: float = 1e-3

    def __post_init__(self):
        for name in ("gyro_scale", "gyro_misalignment", "accel_scale", "accel_misalignment"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3, 3))
        self.gyro_bias_init = np.asarray(self.gyro_bias_init, dtype=float).reshape(3)
        self.accel_bias_init = np.asarray(self.accel_bias_init, dtype=float).reshape(3)
        self.validate()

    def validate(self):
        for name in ("gyro_scale", "accel_scale"):
            S = getattr(self, name)
            if np.any(np.diag(S) <= 0) or np.any(S - np.diag(np.diag(S))):
                raise ConfigurationError(f"{name} must be diagonal with positive entries")
        for name in ("gyro_misalignment", "accel_misalignment"):
            M = getattr(self, name)
            if not np.allclose(np.diag(M), 1.0) or np.any(np.abs(M - np.diag(np.diag(M))) >= 0.1):
                raise ConfigurationError(f"{name} must be unit-diagonal with off-diagonals below 0.1")

    @classmethod
    def noiseless(cls):
        return cls(gyro_white_sigma=0.0, accel_white_sigma=0.0, gyro_walk_sigma=0.0, accel_walk_sigma=0.0)

    @property
    def gyro_correction(self):
        """Matrix mapping raw (bias-free) gyro readings back to true rates."""
        return self.gyro_scale @ self.gyro_misalignment

    @property
    def accel_correction(self):
        return self.accel_scale @ self.accel_misalignment

    @classmethod
    def consumer_grade(cls):
        """Default magnitudes of the bundled scenarios."""
        return cls(
            gyro_scale=np.diag([1.01, 0.99, 1.005]),
            gyro_misalignment=np.array([[1.0, 0.004, -0.003], [-0.002, 1.0, 0.005], [0.003, -0.004, 1.0]]),
            accel_scale=np.diag([0.99, 1.012, 1.008]),
            accel_misalignment=np.array([[1.0, -0.005, 0.004], [0.003, 1.0, -0.002], [-0.004, 0.006, 1.0]]),
            gyro_bias_init=np.array([0.006, -0.004, 0.008]),
            accel_bias_init=np.array([0.08, -0.06, 0.05]),
        )


@dataclass
class ImuStream:
    t_ns: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    gyro_bias: np.ndarray | None = None
    accel_bias: np.ndarray | None = None

    def __len__(self):
        return len(self.t_ns)


def specific_force(truth: GroundTruth):
    """True accelerometer reading ``R_wb^T (a_w - g_w)`` per sample."""
    R = np.array([quat_to_rot(q) for q in truth.q])
    return np.einsum("nji,nj->ni", R, truth.acc - GRAVITY)


def synthesize_imu(truth: GroundTruth, noise: ImuNoiseModel, seed: int = 0, imu_rate=None) -> ImuStream:
    """Corrupt ground-truth rates/specific force with the inverse calibration model."""
    if len(truth) < 2:
        raise ConfigurationError("need at least two truth samples")
    dt_ns = np.diff(truth.t_ns)
    if np.any(dt_ns != dt_ns[0]):
        raise ConfigurationError("truth must be uniformly sampled at the IMU rate")
    if imu_rate is not None and dt_ns[0] * imu_rate != 1_000_000_000:
        raise ConfigurationError("truth sampling does not match the IMU rate")
    dt = dt_ns[0] * 1e-9
    n = len(truth)
    rng = np.random.default_rng(seed)

    Cg_inv = np.linalg.inv(noise.gyro_correction)
    Ca_inv = np.linalg.inv(noise.accel_correction)
    gyro_walk = rng.normal(size=(n, 3)) * noise.gyro_walk_sigma * np.sqrt(dt)
    accel_walk = rng.normal(size=(n, 3)) * noise.accel_walk_sigma * np.sqrt(dt)
    gyro_walk[0] = 0.0
    accel_walk[0] = 0.0
    bg = noise.gyro_bias_init + np.cumsum(gyro_walk, axis=0)
    ba = noise.accel_bias_init + np.cumsum(accel_walk, axis=0)
    ng = rng.normal(size=(n, 3)) * noise.gyro_white_sigma / np.sqrt(dt)
    na = rng.normal(size=(n, 3)) * noise.accel_white_sigma / np.sqrt(dt)

    gyro = truth.omega @ Cg_inv.T + bg + ng
    accel = specific_force(truth) @ Ca_inv.T + ba + na
    return ImuStream(truth.t_ns.copy(), gyro, accel, bg, ba)
