"""Shared builders for backend tests: noiseless windows cut from a simulated run."""

import numpy as np

from robustvio.backend import FrameState, ImuBlock, Prior, SlidingWindow, SolverParams
from robustvio.geometry import rot_zyx, wrap_angle
from robustvio.loop import LOOP, PoseGraphEdge, PoseGraphNode, relative_edge
from robustvio.preintegration import PreintegrationBuffer, propagate
from robustvio.simulator import ImuNoiseModel, TrajectorySpec, simulate
from robustvio.simulator.scenario import ScenarioSpec
from robustvio.simulator.scene import SceneSpec


def noiseless_run(duration=4.0, seed=2, static_count=400):
    traj = TrajectorySpec(kind="circle", duration=duration, radius=6.0, angular_speed=0.3, vertical_amplitude=0.3,
                          vertical_frequency=0.15, tilt_amplitude=0.05, seed=seed)
    scene = SceneSpec(static_count=static_count, path_radius=6.0, path_clearance=1.5)
    spec = ScenarioSpec(trajectory=traj, noise=ImuNoiseModel.noiseless(), scene=scene, pixel_sigma=0.0)
    return simulate(spec)


def imu_block(res, k0, k1, psi_b=1.0):
    ds = res.dataset
    buf = PreintegrationBuffer(ds.imu.t_ns[k0:k1 + 1], ds.imu.gyro[k0:k1 + 1], ds.imu.accel[k0:k1 + 1])
    return ImuBlock(propagate(buf), psi_b)


def build_window(res, start=0, n=10, params=None, prior=True, max_features=None):
    """Window over frames ``start..start+n-1`` at ground truth with exact inverse ranges."""
    truth, cam = res.truth, res.dataset.camera
    idx = truth.frame_indices()
    win = SlidingWindow(cam.T_bc, params or SolverParams(focal=cam.fx), size=n)
    for k in range(start, start + n):
        i = idx[k]
        fr = FrameState(k, int(truth.t_ns[i]), truth.p[i].copy(), truth.v[i].copy(), truth.q[i].copy())
        win.add_frame(fr, imu_block(res, idx[k - 1], i) if k > start else None)
    if prior:
        win.prior = Prior.on_state(win.frames[0])
    tr = res.tracks
    pts = tr.static_points
    count = 0
    for kid in np.unique(tr.kp_id):
        ent = tr.kp_entity[int(kid)]
        if ent[0] != "static":
            continue
        sel = (tr.kp_id == kid) & (tr.frame_id >= start) & (tr.frame_id < start + n)
        if sel.sum() < 2:
            continue
        for fid, u, v in zip(tr.frame_id[sel], tr.u[sel], tr.v[sel]):
            win.add_observation(int(kid), int(fid), cam.back_project([u, v])[0])
        feat = win.features[int(kid)]
        fr = win.frame(feat.anchor)
        pc = cam.T_bc.inverse().transform(fr.pose().inverse().transform(pts[ent[1]]))
        feat.lam = 1.0 / np.linalg.norm(pc)
        count += 1
        if max_features is not None and count >= max_features:
            break
    return win


def yaw_drift_chain(n=50, radius=5.0, total_drift_deg=10.0):
    """Circle of ``n`` nodes, odometry edges from a copy with uniform yaw drift, one exact loop edge."""
    truth = []
    for k in range(n):
        a = 2 * np.pi * k / n
        truth.append(PoseGraphNode(np.array([radius * np.cos(a), radius * np.sin(a), 1.0]),
                                   wrap_angle(a + np.pi / 2), 0.02, -0.01))
    drifted = []
    for k, nd in enumerate(truth):
        d = np.radians(total_drift_deg) * k / (n - 1)
        p = rot_zyx(d, 0, 0) @ (nd.p - truth[0].p) + truth[0].p
        drifted.append(PoseGraphNode(p, wrap_angle(nd.yaw + d), nd.pitch, nd.roll))
    edges = []
    for k in range(n - 1):
        p_ij, psi = relative_edge(drifted[k].pose(), drifted[k + 1].pose())
        edges.append(PoseGraphEdge(k, k + 1, p_ij, psi))
    p_ij, psi = relative_edge(truth[0].pose(), truth[-1].pose())
    edges.append(PoseGraphEdge(0, n - 1, p_ij, psi, LOOP))
    return truth, drifted, edges


def small_blackout_spec(seed=11, duration=8.0):
    """Short ablation-shaped scenario: clusters plus a full blackout from 3 s to 5 s."""
    from robustvio.simulator import BlackoutEvent, ablation_scenario

    spec = ablation_scenario(seed=seed, duration=30.0)
    spec.trajectory.duration = duration
    spec.scene.static_count = 500
    spec.scene.blackout_events = [BlackoutEvent(3.0, 5.0, coverage_fraction=1.0)]
    return spec


def cli_determinism(root):
    """Run every subcommand twice with fixed seeds; map each CSV output to whether both runs match byte-for-byte."""
    from pathlib import Path

    from robustvio.cli import main
    from robustvio.flatconfig import write_flat

    root = Path(root)
    spec = root / "spec.txt"
    write_flat(spec, small_blackout_spec().to_flat())
    for tag in ("a", "b"):
        d = root / tag
        assert main(["simulate", "--spec", str(spec), "--out", str(d / "data")]) == 0
        assert main(["train-denoiser", "--out", str(d / "model"), "--epochs", "2", "--sequences", "1",
                     "--seed", "1"]) == 0
        assert main(["run", "--dataset", str(d / "data"), "--preset", "SRVIO", "--model", str(d / "model"),
                     "--seed", "3", "--out", str(d / "run")]) == 0
        assert main(["evaluate", "--est", str(d / "run" / "estimate.csv"), "--gt", str(d / "data" / "groundtruth.csv"),
                     "--out", str(d / "metrics.csv")]) == 0
        assert main(["ablate", "--dataset", str(d / "data"), "--model", str(d / "model"), "--seed", "3",
                     "--out", str(d / "ablate")]) == 0
    out = {}
    for f in sorted((root / "a").rglob("*.csv")):
        rel = f.relative_to(root / "a")
        other = root / "b" / rel
        out[str(rel)] = other.exists() and other.read_bytes() == f.read_bytes()
    return out
