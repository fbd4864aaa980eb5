
import numpy as np
import pytest

from robustvio.geometry import Pose, quat_to_rot
from robustvio.preintegration import GRAVITY
from robustvio.simulator import (
    STATIC,
    BlackoutEvent,
    CameraModel,
    ConfigurationError,
    DatasetError,
    ImuNoiseModel,
    ScenarioSpec,
    SceneSpec,
    TrajectorySpec,
    ablation_scenario,
    generate_trajectory,
    read_dataset,
    simulate,
    synthesize_imu,
    write_dataset,
)


def small_scenario(seed=3, duration=6.0):
    spec = ablation_scenario(seed=seed, duration=duration)
    spec.scene.static_count = 300
    spec.scene.blackout_events = [BlackoutEvent(1.0, 5.0, coverage_fraction=1.0)]
    return spec


def test_stationary_has_no_motion():
    gt = generate_trajectory(TrajectorySpec(kind="stationary", duration=2.0))
    assert np.all(gt.v == 0) and np.all(gt.omega == 0)


def test_circle_centripetal_acceleration():
    gt = generate_trajectory(TrajectorySpec(kind="circle", radius=5.0, angular_speed=0.4, duration=3.0))
    np.testing.assert_allclose(np.linalg.norm(gt.acc, axis=1), 0.4 ** 2 * 5.0, atol=1e-12)


@pytest.mark.parametrize("kind", ["circle", "figure-eight", "waypoint-spline"])
def test_velocity_matches_finite_difference(kind):
    spec = TrajectorySpec(kind=kind, duration=8.0, vertical_amplitude=0.3, tilt_amplitude=0.1,
                          waypoints=[(0, 0), (4, 1), (3, 5), (-2, 3)])
    gt = generate_trajectory(spec)
    dt = 1.0 / spec.imu_rate
    fd = (gt.p[2:] - gt.p[:-2]) / (2 * dt)
    assert np.max(np.abs(fd - gt.v[1:-1])) < 1e-3


def test_figure_eight_is_deterministic():
    spec = TrajectorySpec(kind="figure-eight", duration=5.0, seed=11)
    a, b = generate_trajectory(spec), generate_trajectory(spec)
    for name in ("t_ns", "p", "v", "acc", "q", "omega"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_bad_specs_rejected():
    with pytest.raises(ConfigurationError):
        generate_trajectory(TrajectorySpec(kind="spiral"))
    with pytest.raises(ConfigurationError):
        generate_trajectory(TrajectorySpec(imu_rate=200, cam_rate=30))
    with pytest.raises(ConfigurationError):
        ImuNoiseModel(gyro_misalignment=np.array([[1, 0.2, 0], [0, 1, 0], [0, 0, 1]]))


def test_noiseless_stationary_reads_gravity_only():
    gt = generate_trajectory(TrajectorySpec(kind="stationary", duration=1.0))
    imu = synthesize_imu(gt, ImuNoiseModel.noiseless())
    np.testing.assert_allclose(imu.accel, np.tile([0, 0, 9.81], (len(gt), 1)), atol=1e-12)
    np.testing.assert_array_equal(imu.gyro, 0)


def test_constant_gyro_bias_and_heading_drift():
    b = np.array([0.001, -0.002, 0.003])
    gt = generate_trajectory(TrajectorySpec(kind="stationary", duration=10.0))
    noise = ImuNoiseModel(gyro_bias_init=b, gyro_white_sigma=0, accel_white_sigma=0, gyro_walk_sigma=0,
                          accel_walk_sigma=0)
    imu = synthesize_imu(gt, noise, seed=5)
    np.testing.assert_allclose(imu.gyro - gt.omega, np.tile(b, (len(gt), 1)), atol=1e-15)
    heading = np.sum(imu.gyro[:-1, 2]) * 0.005
    assert heading == pytest.approx(b[2] * 10.0, rel=1e-9)


def test_imu_rate_mismatch_raises():
    gt = generate_trajectory(TrajectorySpec(kind="stationary", duration=1.0, imu_rate=200))
    with pytest.raises(ConfigurationError):
        synthesize_imu(gt, ImuNoiseModel(), imu_rate=400)


def test_double_integration_recovers_positions():
    spec = TrajectorySpec(kind="figure-eight", duration=10.0, vertical_amplitude=0.4, tilt_amplitude=0.1)
    gt = generate_trajectory(spec)
    imu = synthesize_imu(gt, ImuNoiseModel.noiseless())
    R = np.array([quat_to_rot(q) for q in gt.q])
    a_w = np.einsum("nij,nj->ni", R, imu.accel) + GRAVITY
    dt = 1.0 / spec.imu_rate
    p, v = gt.p[0].copy(), gt.v[0].copy()
    err = 0.0
    for k in range(len(gt) - 1):
        a = 0.5 * (a_w[k] + a_w[k + 1])
        p = p + v * dt + 0.5 * a * dt * dt
        v = v + a * dt
        err = max(err, np.linalg.norm(p - gt.p[k + 1]))
    assert err < 1e-3


def test_pinhole_projection():
    cam = CameraModel()
    np.testing.assert_allclose(cam.project(np.array([0.0, 0.0, 2.0])), [[cam.cx, cam.cy]])
    X = np.array([0.4, -0.3, 2.5])
    np.testing.assert_allclose(cam.project(X), [[400 * 0.4 / 2.5 + 320, 400 * -0.3 / 2.5 + 240]], atol=1e-12)
    b = cam.back_project(cam.project(X))[0]
    np.testing.assert_allclose(b, X / np.linalg.norm(X), atol=1e-12)


def test_full_coverage_hides_every_static_keypoint():
    spec = small_scenario()
    res = simulate(spec)
    tr = res.dataset.tracks
    frames = res.truth.frame_indices()
    t_frames = res.truth.t[frames]
    # ramp is 1 s, so the occluder covers the full view from 2 s to 4 s
    full = np.flatnonzero((t_frames >= 2.0) & (t_frames <= 4.0))
    assert len(full) == 21
    for fid in full:
        sel = tr.frame_id == fid
        assert sel.sum() > 0
        assert np.all(tr.label[sel] != STATIC)
        assert np.all(res.dataset.mask(fid) == 0)


def test_dynamic_cluster_tracks_break_static_epipolar_geometry():
    spec = small_scenario(duration=6.0)
    spec.scene.blackout_events = []
    res = simulate(spec)
    cam = spec.camera
    frames = res.truth.frame_indices()
    ents = res.tracks.kp_entity
    checked = 0
    for f in range(len(frames) - 1):
        i0, i1 = frames[f], frames[f + 1]
        poses = []
        for i in (i0, i1):
            R = quat_to_rot(res.truth.q[i]) @ cam.T_bc.R
            poses.append(Pose.from_matrix(np.block([[R, (res.truth.p[i] + quat_to_rot(res.truth.q[i]) @ cam.T_bc.p)[:, None]],
                                                     [np.zeros((1, 3)), np.ones((1, 1))]])))
        rel = poses[1].inverse().compose(poses[0])
        t = rel.p
        E = np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0]]) @ rel.R
        Kinv = np.linalg.inv(cam.K)
        F = Kinv.T @ E @ Kinv
        k0, uv0, _ = res.tracks.frame(f)
        k1, uv1, _ = res.tracks.frame(f + 1)
        common = np.intersect1d(k0, k1)
        for k in common:
            e = ents[int(k)]
            if e[0] != "cluster" or spec.scene.dynamic_clusters[e[1]].motion == "static":
                continue
            x0 = np.r_[uv0[k0 == k][0], 1.0]
            x1 = np.r_[uv1[k1 == k][0], 1.0]
            Fx0, Ftx1 = F @ x0, F.T @ x1
            sampson = (x1 @ F @ x0) ** 2 / (Fx0[0] ** 2 + Fx0[1] ** 2 + Ftx1[0] ** 2 + Ftx1[1] ** 2)
            assert sampson > 0
            checked += 1
    assert checked > 0


def test_simulation_is_deterministic():
    a = simulate(small_scenario(duration=5.0)).dataset
    b = simulate(small_scenario(duration=5.0)).dataset
    assert np.array_equal(a.imu.accel, b.imu.accel)
    assert np.array_equal(a.tracks.u, b.tracks.u) and np.array_equal(a.tracks.kp_id, b.tracks.kp_id)
    assert a.masks.keys() == b.masks.keys()


@pytest.fixture(scope="module")
def written(tmp_path_factory):
    ds = simulate(small_scenario(duration=6.0)).dataset
    d = tmp_path_factory.mktemp("ds")
    write_dataset(ds, d)
    return ds, d


def test_dataset_round_trip_is_bit_exact(written):
    ds, d = written
    back = read_dataset(d)
    for name in ("t_ns", "gyro", "accel"):
        assert np.array_equal(getattr(ds.imu, name), getattr(back.imu, name))
    for name in ("frame_id", "t_ns", "kp_id", "u", "v", "label"):
        assert np.array_equal(getattr(ds.tracks, name), getattr(back.tracks, name))
    for name in ("t_ns", "p", "q", "v"):
        assert np.array_equal(getattr(ds.groundtruth, name), getattr(back.groundtruth, name))
    assert ds.masks.keys() == back.masks.keys()
    assert all(np.array_equal(ds.masks[k], back.masks[k]) for k in ds.masks)
    assert ds.descriptors.keys() == back.descriptors.keys()
    assert all(np.array_equal(ds.descriptors[k], back.descriptors[k]) for k in ds.descriptors)
    assert np.array_equal(ds.camera.T_bc.q, back.camera.T_bc.q) and ds.camera.fx == back.camera.fx
    for name in ("gyro_scale", "accel_misalignment", "gyro_bias_init"):
        assert np.array_equal(getattr(ds.noise, name), getattr(back.noise, name))
    assert ds.scenario == back.scenario
    assert ScenarioSpec.from_flat(back.scenario).to_flat() == ScenarioSpec.from_flat(ds.scenario).to_flat()


def test_missing_imu_file(written, tmp_path):
    _, d = written
    for f in d.iterdir():
        if f.name != "imu.csv" and f.is_file():
            (tmp_path / f.name).write_bytes(f.read_bytes())
    with pytest.raises(DatasetError, match="imu.csv not found"):
        read_dataset(tmp_path)


def test_truncated_row_reports_line(written, tmp_path):
    _, d = written
    for f in d.iterdir():
        if f.is_file():
            (tmp_path / f.name).write_bytes(f.read_bytes())
    lines = (tmp_path / "tracks.csv").read_text().splitlines()
    lines[7] = ",".join(lines[7].split(",")[:3])
    (tmp_path / "tracks.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=r"tracks\.csv:8: expected 6 fields, got 3"):
        read_dataset(tmp_path)


def test_scene_rejects_bad_events():
    with pytest.raises(ConfigurationError):
        BlackoutEvent(1.0, 2.0, coverage_fraction=1.5)
    with pytest.raises(ConfigurationError):
        SceneSpec(blackout_events=[BlackoutEvent(5.0, 90.0)]).validate(60.0)


def test_unknown_scenario_key_rejected():
    flat = ScenarioSpec().to_flat()
    flat["warp_factor"] = 9
    with pytest.raises(ConfigurationError, match="warp_factor"):
        ScenarioSpec.from_flat(flat)


def test_scenario_file_roundtrip_preserves_every_field(tmp_path):
    from robustvio.flatconfig import write_flat
    from robustvio.simulator import ablation_scenario

    spec = ablation_scenario(seed=4)
    spec.trajectory.height = 1.25
    write_flat(tmp_path / "s.txt", spec.to_flat())
    back = ScenarioSpec.from_file(tmp_path / "s.txt")
    assert back.trajectory.height == 1.25 and back.camera.height == spec.camera.height
    assert back.to_flat() == spec.to_flat()
