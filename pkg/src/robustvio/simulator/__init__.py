"""Deterministic scenario simulator and dataset I/O."""

from .dataset import Dataset, DatasetError, GroundTruthTable, Tracks, read_dataset, write_dataset
from .imu import ImuNoiseModel, ImuStream, synthesize_imu
from .scenario import ScenarioSpec, SimulationResult, ablation_scenario, clean_scenario, simulate
from .scene import DYNAMIC, STATIC, BlackoutEvent, CameraModel, DynamicCluster, SceneSpec, TrackSet, project_tracks
from .trajectory import ConfigurationError, GroundTruth, TrajectorySpec, generate_trajectory

__all__ = [
    "BlackoutEvent", "CameraModel", "ConfigurationError", "DYNAMIC", "Dataset", "DatasetError", "DynamicCluster",
    "GroundTruth", "GroundTruthTable", "ImuNoiseModel", "ImuStream", "STATIC", "ScenarioSpec", "SceneSpec",
    "SimulationResult", "TrackSet", "Tracks", "TrajectorySpec", "ablation_scenario", "clean_scenario", "generate_trajectory",
    "project_tracks", "read_dataset", "simulate", "synthesize_imu", "write_dataset",
]
