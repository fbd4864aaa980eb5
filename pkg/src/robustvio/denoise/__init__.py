"""Learned IMU correction: calibration, dilated-conv corrections and quality scores."""

from .io import ModelFormatError, load_denoiser, save_denoiser
from .losses import GroundTruthIncrements, accel_loss, gyro_loss, huber, so3_exp, so3_log
from .model import (
    ACCEL,
    GYRO,
    CalibrationModel,
    Denoiser,
    DenoiserConfig,
    DenoiserOutput,
    InvalidWindowError,
    imu_attention_weight,
)
from .training import (
    ImuSequence,
    TrainedDenoiser,
    TrainingConfig,
    TrainingOrderError,
    open_loop_drift,
    synthetic_sequences,
    train_accel,
    train_denoiser,
    train_gyro,
)

__all__ = [
    "ACCEL", "CalibrationModel", "Denoiser", "DenoiserConfig", "DenoiserOutput", "GYRO", "GroundTruthIncrements",
    "ImuSequence", "InvalidWindowError", "ModelFormatError", "TrainedDenoiser", "TrainingConfig",
    "TrainingOrderError", "accel_loss", "gyro_loss", "huber", "imu_attention_weight", "load_denoiser",
    "open_loop_drift", "save_denoiser", "so3_exp", "so3_log", "synthetic_sequences", "train_accel",
    "train_denoiser", "train_gyro",
]
