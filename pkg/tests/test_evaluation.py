import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustvio.evaluation import (
    EvaluationError,
    PipelineConfig,
    PipelineError,
    Trajectory,
    associate,
    ate_rms,
    groundtruth_trajectory,
    read_trajectory,
    rpe_rms,
    run_pipeline,
    umeyama_align,
    windowed_ate,
)
from robustvio.evaluation.pipeline import NAMED_CONFIGS, _drift_apply
from robustvio.geometry import Pose, quat_mul, rot_to_quat, rot_zyx, so3_exp_mat
from robustvio.loop import PoseGraphNode
from robustvio.simulator import clean_scenario, simulate


def circle_traj(n=200, dt_ns=50_000_000, radius=4.0):
    t = np.arange(n, dtype=np.int64) * dt_ns
    a = np.linspace(0, 3 * np.pi, n)
    p = np.column_stack([radius * np.cos(a), radius * np.sin(a), 0.3 * np.sin(2 * a)])
    q = np.array([rot_to_quat(rot_zyx(x + np.pi / 2, 0.1 * np.sin(x), 0.0)) for x in a])
    return Trajectory(t, p, q)


def transformed(tr, s, R, t):
    qR = rot_to_quat(R)
    q = np.array([quat_mul(qR, x) for x in tr.q])
    return Trajectory(tr.t_ns.copy(), s * tr.p @ R.T + t, q)


# -- association --------------------------------------------------------------

def test_associate_identical_timestamps_pairs_all():
    tr = circle_traj(50)
    a = associate(tr, tr)
    assert np.array_equal(a.idx_a, np.arange(50)) and a.dropped_a == a.dropped_b == 0


def test_associate_disjoint_ranges_error():
    a = circle_traj(20)
    b = Trajectory(a.t_ns + 10**11, a.p, a.q)
    with pytest.raises(EvaluationError):
        associate(a, b)


def test_associate_jittered_timestamps_find_partners(rng):
    b = circle_traj(100)
    jitter = rng.integers(-1_000_000, 1_000_001, size=100)
    a = Trajectory(b.t_ns + jitter, b.p, b.q)
    res = associate(a, b, max_dt_ns=5_000_000)
    assert np.array_equal(res.idx_a, res.idx_b) and len(res.idx_a) == 100


def test_associate_reports_unpaired_rows():
    b = circle_traj(40)
    a = b.subset(np.arange(0, 40, 2))
    res = associate(a, b)
    assert len(res.idx_a) == 20 and res.dropped_b == 20 and res.dropped_a == 0


def test_trajectory_requires_increasing_time():
    tr = circle_traj(5)
    with pytest.raises(EvaluationError):
        Trajectory(tr.t_ns[::-1].copy(), tr.p, tr.q)


# -- alignment ----------------------------------------------------------------

def test_umeyama_identity():
    p = circle_traj(30).p
    al = umeyama_align(p, p, with_scale=True)
    assert np.allclose(al.R, np.eye(3), atol=1e-12) and al.s == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(al.t, 0, atol=1e-12)


def test_umeyama_recovers_similarity():
    b = circle_traj(60).p
    R = so3_exp_mat(np.array([0.3, -0.5, 1.1]))
    s, t = 1.7, np.array([2.0, -1.0, 0.5])
    a = s * b @ R.T + t
    al = umeyama_align(a, b, with_scale=True)
    assert abs(al.s - s) < 1e-9 and np.abs(al.R - R).max() < 1e-9 and np.abs(al.t - t).max() < 1e-9
    rigid = umeyama_align(b @ R.T + t, b)
    assert rigid.s == 1.0 and np.abs(rigid.R - R).max() < 1e-9


def test_umeyama_degenerate_inputs():
    with pytest.raises(EvaluationError):
        umeyama_align(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1.0, 2.0, 0.5])
    with pytest.raises(EvaluationError):
        umeyama_align(line, line)


# -- ATE / RPE ----------------------------------------------------------------

def test_ate_zero_on_identity():
    tr = circle_traj()
    for mode in ("se3", "sim3", "none"):
        assert ate_rms(tr, tr, align=mode) == pytest.approx(0.0, abs=1e-12)


def test_ate_constant_offset_without_alignment():
    gt = circle_traj()
    d = np.array([0.3, -0.4, 1.2])
    est = Trajectory(gt.t_ns, gt.p + d, gt.q)
    assert abs(ate_rms(est, gt, align="none") - np.linalg.norm(d)) < 1e-12
    assert ate_rms(est, gt, align="se3") < 1e-12


def test_ate_rigid_transform_removed_by_alignment():
    gt = circle_traj()
    est = transformed(gt, 1.0, so3_exp_mat(np.array([0.2, 0.1, -2.0])), np.array([5.0, 1.0, -3.0]))
    assert ate_rms(est, gt) < 1e-9
    scaled = transformed(gt, 2.5, np.eye(3), np.zeros(3))
    assert ate_rms(scaled, gt, align="sim3") < 1e-9
    assert ate_rms(scaled, gt, align="se3") > 0.1


def test_ate_normalized_by_path_length():
    gt = circle_traj()
    est = Trajectory(gt.t_ns, gt.p + [1.0, 0, 0], gt.q)
    assert ate_rms(est, gt, align="none", normalize=True) == pytest.approx(1.0 / gt.path_length(), rel=1e-12)


def test_ate_bad_mode():
    tr = circle_traj(10)
    with pytest.raises(EvaluationError):
        ate_rms(tr, tr, align="affine")


def test_rpe_identity_and_rigid_offset():
    gt = circle_traj()
    assert rpe_rms(gt, gt) == (0.0, 0.0)
    est = transformed(gt, 1.0, so3_exp_mat(np.array([0.0, 0.4, 1.0])), np.array([3.0, 2.0, 1.0]))
    t_err, r_err = rpe_rms(est, gt)
    assert t_err < 1e-9 and r_err < 1e-6


def test_rpe_uniform_drift_equals_injected_step():
    # body-frame forward drift of r meters per delta accumulates along the path
    gt = circle_traj(400, dt_ns=10_000_000)
    r, delta_s = 0.07, 0.5
    rate = r / delta_s
    t = (gt.t_ns - gt.t_ns[0]) * 1e-9
    est = Trajectory(gt.t_ns, gt.p + np.outer(rate * t, [1.0, 0.0, 0.0]), gt.q)
    t_err, r_err = rpe_rms(est, gt, delta_s=delta_s)
    assert abs(t_err - r) < 1e-9 and r_err < 1e-9


def test_rpe_delta_too_short_or_long():
    gt = circle_traj(20)
    with pytest.raises(EvaluationError):
        rpe_rms(gt, gt, delta_s=0.001)
    with pytest.raises(EvaluationError):
        rpe_rms(gt, gt, delta_s=100.0)


def test_read_trajectory_roundtrip(tmp_path):
    from robustvio.backend import write_estimate

    tr = circle_traj(25)
    write_estimate(tmp_path / "e.csv", zip(tr.t_ns, tr.p, tr.q))
    back = read_trajectory(tmp_path / "e.csv")
    assert np.array_equal(back.t_ns, tr.t_ns) and np.array_equal(back.p, tr.p) and np.array_equal(back.q, tr.q)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(EvaluationError):
        read_trajectory(tmp_path / "bad.csv")


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-1, 1), st.floats(-5, 5), st.integers(0, 10**6))
def test_alignment_never_increases_ate(yaw, pitch, shift, seed):
    gt = circle_traj(60)
    rng = np.random.default_rng(seed)
    est = transformed(gt, 1.0, rot_zyx(yaw, pitch, 0.0), np.array([shift, 0.0, 0.0]))
    est = Trajectory(est.t_ns, est.p + rng.normal(scale=0.1, size=est.p.shape), est.q)
    assert ate_rms(est, gt, align="se3") <= ate_rms(est, gt, align="none") + 1e-12
    assert rpe_rms(est, est) == (0.0, 0.0)


# -- configuration ------------------------------------------------------------

def test_config_needs_a_sensor():
    with pytest.raises(ValueError):
        PipelineConfig(use_visual=False, use_inertial=False)
    with pytest.raises(ValueError):
        PipelineConfig(use_inertial=False, denoiser=True)


def test_named_configs_compose():
    vio = PipelineConfig.named("VIO")
    sr = PipelineConfig.named("SRVIO")
    additions = ("semantic_filter", "adaptive_weights", "denoiser", "loop_closure")
    assert all(getattr(sr, a) for a in additions) and not any(getattr(vio, a) for a in additions)
    assert dataclasses.replace(sr, name="VIO", **{a: False for a in additions}) == vio
    assert set(NAMED_CONFIGS) == {"VIO", "VO+SS", "IO", "VIO+SS", "VIO+SS+W", "SRVIO"}
    with pytest.raises(ValueError):
        PipelineConfig.named("VINS")


def test_config_file_and_overrides(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# ablation row\nname = VIO+SS\nsemantic_filter = true\nf_max = 200\nepsilon = 0.5\n")
    cfg = PipelineConfig.from_file(f, seed=4)
    assert cfg.semantic_filter and cfg.f_max == 200 and cfg.epsilon == 0.5 and cfg.seed == 4
    f.write_text("bogus = 1\n")
    with pytest.raises(ValueError, match="bogus"):
        PipelineConfig.from_file(f)


def test_drift_apply_identity_and_yaw():
    pose = Pose(rot_to_quat(rot_zyx(0.4, 0.05, -0.02)), np.array([1.0, 2.0, 0.5]))
    ref = Pose(rot_to_quat(rot_zyx(-0.3, 0.01, 0.0)), np.array([0.0, 1.0, 0.0]))
    same = _drift_apply(PoseGraphNode.from_pose(ref), ref, pose)
    assert np.allclose(same.pose().p, pose.p) and np.allclose(same.rotation(), pose.R)
    node = PoseGraphNode.from_pose(ref)
    shifted = PoseGraphNode(node.p + [1.0, 0.0, 0.0], node.yaw + 0.2, node.pitch, node.roll)
    out = _drift_apply(shifted, ref, pose)
    assert out.yaw == pytest.approx(PoseGraphNode.from_pose(pose).yaw + 0.2)
    assert out.pitch == pytest.approx(0.05) and out.roll == pytest.approx(-0.02)
    assert np.linalg.norm(out.p - shifted.p) == pytest.approx(np.linalg.norm(pose.p - ref.p))


# -- end-to-end runs ----------------------------------------------------------

@pytest.fixture(scope="module")
def clean30():
    return simulate(clean_scenario(seed=3, duration=30.0)).dataset


@pytest.fixture(scope="module")
def short():
    return simulate(clean_scenario(seed=5, duration=8.0)).dataset


def test_vio_clean_static_scene(clean30):
    res = run_pipeline(clean30, PipelineConfig.named("VIO"))
    assert res.status == "ok"
    assert ate_rms(res.trajectory(), groundtruth_trajectory(clean30)) < 0.05


def test_io_drift_grows_with_time(clean30):
    res = run_pipeline(clean30, PipelineConfig.named("IO"))
    est, gt = res.trajectory(), groundtruth_trajectory(clean30)
    w = windowed_ate(est, gt, window_s=5.0)
    assert np.all(np.diff(w) > 0)
    rpe_t, _ = rpe_rms(est, gt)
    assert rpe_t < ate_rms(est, gt, align="none")


def test_run_is_deterministic(short, tmp_path):
    cfg = PipelineConfig.named("VIO+SS+W", seed=2)
    run_pipeline(short, cfg, out_dir=tmp_path / "a")
    run_pipeline(short, cfg, out_dir=tmp_path / "b")
    for name in ("estimate.csv", "report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_all_additions_off_reproduces_vanilla(short):
    a = run_pipeline(short, PipelineConfig.named("VIO"))
    off = dataclasses.replace(PipelineConfig.named("SRVIO"), name="plain", semantic_filter=False,
                              adaptive_weights=False, denoiser=False, loop_closure=False)
    b = run_pipeline(short, off)
    assert len(a.estimate) == len(b.estimate)
    for (ta, pa, qa), (tb, pb, qb) in zip(a.estimate, b.estimate):
        assert ta == tb and np.array_equal(pa, pb) and np.array_equal(qa, qb)


def test_report_psi_c_matches_kept_over_fmax(short):
    cfg = PipelineConfig.named("VIO+SS+W", f_max=120)
    res = run_pipeline(short, cfg)
    for r in res.frames[1:]:
        assert r.psi_c == min(r.kept / cfg.f_max, 1.0)
        assert r.weight_c == r.psi_c
        assert r.weight_b == r.psi_b == 1.0


def test_report_columns(short, tmp_path):
    run_pipeline(short, PipelineConfig.named("VO+SS"), out_dir=tmp_path)
    head = (tmp_path / "report.csv").read_text().splitlines()[0]
    assert head == "frame_id,t_ns,tracked,kept,psi_c,weight_c,psi_b,weight_b,features,iterations,status"
    assert (tmp_path / "timing.json").exists() and not (tmp_path / "posegraph.csv").exists()


def test_divergence_detector_keeps_partial_trajectory(short, tmp_path):
    broken = dataclasses.replace(short, imu=dataclasses.replace(short.imu, accel=short.imu.accel + [5e4, 0.0, 0.0]))
    res = run_pipeline(broken, PipelineConfig.named("IO"), out_dir=tmp_path)
    assert res.status == "diverged" and res.frames[-1].status == "diverged"
    assert 0 < len(res.estimate) < len(short.frame_times())
    assert read_trajectory(tmp_path / "estimate.csv").t_ns.size == len(res.estimate)


def test_denoiser_toggle_requires_model(short):
    with pytest.raises(PipelineError, match="imu_denoise"):
        run_pipeline(short, PipelineConfig.named("SRVIO"))


def test_missing_initial_groundtruth_error(short):
    gt = dataclasses.replace(short.groundtruth, t_ns=short.groundtruth.t_ns + 1)
    with pytest.raises(PipelineError, match="frame 0: evaluation_cli"):
        run_pipeline(dataclasses.replace(short, groundtruth=gt), PipelineConfig.named("VIO"))
