"""Scenario specs (flat key = value files) and the end-to-end ``simulate`` entry point."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..flatconfig import read_flat
from ..geometry import Pose
from .dataset import DESCRIPTOR_DIM, Dataset, GroundTruthTable, Tracks
from .imu import ImuNoiseModel, synthesize_imu
from .scene import BlackoutEvent, CameraModel, DynamicCluster, SceneSpec, TrackSet, project_tracks
from .trajectory import ConfigurationError, GroundTruth, TrajectorySpec, generate_trajectory

_ENTITY_CODE = {"static": 0, "cluster": 1, "occluder": 2}
# trajectory fields whose plain name would collide with a camera key
_TRAJ_KEYS = {"height": "path_height"}


@dataclass
class ScenarioSpec:
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    camera: CameraModel = field(default_factory=CameraModel)
    noise: ImuNoiseModel = field(default_factory=ImuNoiseModel.consumer_grade)
    scene: SceneSpec = field(default_factory=SceneSpec)
    pixel_sigma: float = 0.5
    max_features: int = 300
    descriptor_dim: int = DESCRIPTOR_DIM

    # -- flat serialization -------------------------------------------------
    def to_flat(self) -> dict:
        out = {}
        for f in dataclasses.fields(self.trajectory):
            v = getattr(self.trajectory, f.name)
            if f.name == "waypoints":
                v = list(np.ravel(v)) if len(v) else []
                if not v:
                    continue
            out[_TRAJ_KEYS.get(f.name, f.name)] = v
        cam = self.camera
        out.update(fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy, width=cam.width, height=cam.height)
        out["camera_extrinsic"] = list(np.r_[cam.T_bc.p, cam.T_bc.q])
        for f in dataclasses.fields(self.noise):
            out[f.name] = _flat_val(getattr(self.noise, f.name))
        sc = self.scene
        out.update(static_count=sc.static_count, bbox_min=list(sc.bbox_min), bbox_max=list(sc.bbox_max),
                   path_radius=sc.path_radius, path_clearance=sc.path_clearance)
        for i, cl in enumerate(sc.dynamic_clusters):
            for f in dataclasses.fields(cl):
                out[f"cluster.{i}.{f.name}"] = _flat_val(getattr(cl, f.name))
        for i, ev in enumerate(sc.blackout_events):
            for f in dataclasses.fields(ev):
                out[f"blackout.{i}.{f.name}"] = getattr(ev, f.name)
        out.update(pixel_sigma=self.pixel_sigma, max_features=self.max_features, descriptor_dim=self.descriptor_dim)
        return out

    @classmethod
    def from_flat(cls, flat: dict) -> "ScenarioSpec":
        flat = dict(flat)
        spec = cls()
        known = set()

        def take(name, default):
            known.add(name)
            return flat.get(name, default)

        tkw = {}
        for f in dataclasses.fields(TrajectorySpec):
            default = getattr(spec.trajectory, f.name)
            tkw[f.name] = take(_TRAJ_KEYS.get(f.name, f.name), default)
        tkw["waypoints"] = list(np.asarray(tkw["waypoints"], dtype=float).reshape(-1, 2)) if tkw["waypoints"] else []
        tkw["imu_rate"] = int(tkw["imu_rate"])
        tkw["cam_rate"] = int(tkw["cam_rate"])
        tkw["seed"] = int(tkw["seed"])
        traj = TrajectorySpec(**tkw)

        ext = take("camera_extrinsic", None)
        T_bc = spec.camera.T_bc if ext is None else Pose(np.array(ext[3:7]), np.array(ext[:3]))
        cam = CameraModel(float(take("fx", spec.camera.fx)), float(take("fy", spec.camera.fy)),
                          float(take("cx", spec.camera.cx)), float(take("cy", spec.camera.cy)),
                          int(take("width", spec.camera.width)), int(take("height", spec.camera.height)), T_bc)

        nkw = {}
        for f in dataclasses.fields(ImuNoiseModel):
            v = take(f.name, None)
            if v is None:
                nkw[f.name] = getattr(spec.noise, f.name)
            elif f.name.endswith(("_scale", "_misalignment")):
                v = np.asarray(v, dtype=float)
                nkw[f.name] = np.diag(v) if v.size == 3 else v.reshape(3, 3)
            else:
                nkw[f.name] = np.asarray(v, dtype=float) if isinstance(v, list) else float(v)
        noise = ImuNoiseModel(**nkw)

        clusters = _indexed(flat, "cluster", DynamicCluster, known)
        events = _indexed(flat, "blackout", BlackoutEvent, known)
        scene = SceneSpec(int(take("static_count", spec.scene.static_count)),
                          np.array(take("bbox_min", spec.scene.bbox_min)), np.array(take("bbox_max", spec.scene.bbox_max)),
                          float(take("path_radius", spec.scene.path_radius)),
                          float(take("path_clearance", spec.scene.path_clearance)), clusters, events)
        out = cls(traj, cam, noise, scene, float(take("pixel_sigma", spec.pixel_sigma)),
                  int(take("max_features", spec.max_features)), int(take("descriptor_dim", spec.descriptor_dim)))
        unknown = sorted(set(flat) - known - {"frame_count"})
        if unknown:
            raise ConfigurationError(f"unknown scenario keys: {', '.join(unknown)}")
        return out

    @classmethod
    def from_file(cls, path) -> "ScenarioSpec":
        return cls.from_flat(read_flat(path))


def _flat_val(v):
    if isinstance(v, np.ndarray):
        if v.shape == (3, 3) and not np.any(v - np.diag(np.diag(v))) and not np.allclose(np.diag(v), 1.0):
            return list(np.diag(v))
        return list(np.ravel(v))
    return v


def _indexed(flat, prefix, klass, known):
    groups = {}
    for k, v in flat.items():
        if k.startswith(prefix + "."):
            parts = k.split(".")
            if len(parts) != 3:
                raise ConfigurationError(f"malformed key {k!r}")
            groups.setdefault(int(parts[1]), {})[parts[2]] = v
            known.add(k)
    out = []
    names = {f.name for f in dataclasses.fields(klass)}
    for i in sorted(groups):
        kw = groups[i]
        bad = set(kw) - names
        if bad:
            raise ConfigurationError(f"unknown {prefix} fields: {', '.join(sorted(bad))}")
        out.append(klass(**kw))
    return out


@dataclass
class SimulationResult:
    dataset: Dataset
    truth: GroundTruth
    tracks: TrackSet


def entity_descriptor(entity, seed, dim=DESCRIPTOR_DIM):
    """Persistent unit descriptor of a simulated physical point."""
    code = _ENTITY_CODE[entity[0]]
    rng = np.random.default_rng([int(seed), code, *[int(x) for x in entity[1:]]])
    d = rng.normal(size=dim)
    return d / np.linalg.norm(d)


def simulate(spec: ScenarioSpec) -> SimulationResult:
    tspec = spec.trajectory
    spec.scene.validate(tspec.duration)
    truth = generate_trajectory(tspec)
    seed = tspec.seed
    imu = synthesize_imu(truth, spec.noise, seed=seed + 1, imu_rate=tspec.imu_rate)
    tset = project_tracks(truth, spec.scene, spec.camera, spec.pixel_sigma, seed=seed + 2,
                          max_features=spec.max_features)
    tracks = Tracks(tset.frame_id, tset.t_ns, tset.kp_id, tset.u, tset.v, tset.label)
    gt = GroundTruthTable(truth.t_ns.copy(), truth.p.copy(), truth.q.copy(), truth.v.copy())
    descriptors = {kid: entity_descriptor(e, seed + 3, spec.descriptor_dim) for kid, e in tset.kp_entity.items()}
    scenario = spec.to_flat()
    scenario["frame_count"] = len(truth.frame_indices())
    ds = Dataset(imu, tracks, gt, spec.camera, spec.noise, dict(tset.masks), descriptors, scenario)
    return SimulationResult(ds, truth, tset)


def ablation_scenario(seed=7, duration=60.0) -> ScenarioSpec:
    """Circle run with a full camera blackout from 10 s to 28 s plus parked and moving clusters."""
    traj = TrajectorySpec(kind="circle", duration=duration, imu_rate=200, cam_rate=10, seed=seed,
                          radius=6.0, angular_speed=0.3, height=1.0, vertical_amplitude=0.3,
                          vertical_frequency=0.15, tilt_amplitude=0.05, tilt_frequency=0.25)
    scene = SceneSpec(static_count=900, bbox_min=np.array([-16.0, -16.0, -1.0]), bbox_max=np.array([16.0, 16.0, 4.0]),
                      path_radius=6.0, path_clearance=1.5,
                      dynamic_clusters=[
                          DynamicCluster(count=25, center=np.array([9.0, 4.0, 0.8]), motion="static"),
                          DynamicCluster(count=25, center=np.array([-4.0, 9.0, 1.0]), motion="oscillate",
                                         direction=np.array([0.0, 0.0, 1.0]), amplitude=1.2, frequency=0.4),
                      ],
                      blackout_events=[BlackoutEvent(10.0, 28.0, coverage_fraction=1.0)])
    return ScenarioSpec(trajectory=traj, scene=scene)


def clean_scenario(seed=3, duration=30.0) -> ScenarioSpec:
    """Static scene on the same circle with an unbiased, well-calibrated IMU at MEMS datasheet noise levels."""
    traj = TrajectorySpec(kind="circle", duration=duration, imu_rate=200, cam_rate=10, seed=seed,
                          radius=6.0, angular_speed=0.3, height=1.0, vertical_amplitude=0.3,
                          vertical_frequency=0.15, tilt_amplitude=0.05, tilt_frequency=0.25)
    scene = SceneSpec(static_count=900, bbox_min=np.array([-16.0, -16.0, -1.0]), bbox_max=np.array([16.0, 16.0, 4.0]),
                      path_radius=6.0, path_clearance=1.5)
    noise = ImuNoiseModel(gyro_white_sigma=1.7e-4, accel_white_sigma=2.0e-3, gyro_walk_sigma=1.9e-5,
                          accel_walk_sigma=1.0e-4)
    return ScenarioSpec(trajectory=traj, noise=noise, scene=scene)
