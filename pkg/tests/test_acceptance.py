"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line."""

import csv
import math
import time

import numpy as np
import pytest

from robustvio.backend import visual_residual, visual_residuals
from robustvio.denoise import open_loop_drift
from robustvio.evaluation import Trajectory, ate_rms, rpe_rms
from robustvio.frontend import FrontendParams, three_step_filter
from robustvio.geometry import (
    huber,
    omega_matrix,
    quat_inv,
    quat_mul,
    rot_to_quat,
    rot_zyx,
    so3_exp,
    so3_exp_mat,
    so3_log,
)
from robustvio.loop import (
    PoseGraphEdge,
    PoseGraphNode,
    edge_jacobians,
    edge_residual,
    optimize_pose_graph,
    revisit_hit_rate,
    revisit_trial,
    solve_pnp_ransac,
)
from robustvio.preintegration import BodyState, compose, imu_residual, predict_state, propagate, residual_jacobians
from robustvio.simulator.pairs import MOVING_POINT, synthesize_frame_pair

from conftest import central_diff, random_quat, rel_err
from helpers import build_window, cli_determinism, noiseless_run, yaw_drift_chain
from test_backend import _perturb_pose, _random_instance
from test_loop import _pnp_scene, _pose_error, _random_node
from test_preintegration import _perturbed, _random_buffer, make_buffer


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def test_c01_geometry_kernel(verdict):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(2000):
        phi = rng.uniform(-1, 1, 3)
        phi *= rng.uniform(0, math.pi - 0.02) / np.linalg.norm(phi)
        worst = max(worst, np.max(np.abs(so3_log(so3_exp(phi)) - phi)))
    antisym = all(np.array_equal(W, -W.T) for W in (omega_matrix(rng.normal(scale=3, size=3)) for _ in range(2000)))
    joint = huber(1.0) == 1.0 and huber(np.nextafter(1.0, 0.0)) == np.nextafter(1.0, 0.0) \
        and huber(1.0) == 2 * math.sqrt(1.0) - 1.0
    dt = time.perf_counter() - t0
    verdict(1, worst < 1e-10 and antisym and joint and dt < 1.0,
            f"round trip {worst:.1e}, Omega antisymmetric {antisym}, Huber joint {joint}, {dt:.2f} s")


def test_c02_preintegration_closed_form(verdict):
    t0 = time.perf_counter()
    d = propagate(make_buffer([0, 0, math.pi / 2], [0, 0, 0]))
    rot_err = np.linalg.norm(so3_log(quat_mul(d.gamma, quat_inv(so3_exp([0, 0, math.pi / 2])))))
    s = propagate(make_buffer([0, 0, 0], [0, 0, 9.81]))
    alpha_err = np.max(np.abs(s.alpha - [0, 0, 4.905]))
    rng = np.random.default_rng(2)
    concat = 0.0
    for _ in range(20):
        full = _random_buffer(rng, n=201)
        cut = int(rng.integers(20, 180))
        a = type(full)(full.t_ns[:cut + 1], full.gyro[:cut + 1], full.accel[:cut + 1])
        b = type(full)(full.t_ns[cut:], full.gyro[cut:], full.accel[cut:])
        whole, parts = propagate(full), compose(propagate(a), propagate(b))
        concat = max(concat, np.max(np.abs(parts.alpha - whole.alpha)), np.max(np.abs(parts.beta - whole.beta)),
                     np.linalg.norm(so3_log(quat_mul(parts.gamma, quat_inv(whole.gamma)))))
    dt = time.perf_counter() - t0
    verdict(2, rot_err < 1e-6 and alpha_err < 1e-6 and concat < 1e-8 and dt < 5.0,
            f"gamma {rot_err:.1e} rad, alpha {alpha_err:.1e} m, concatenation {concat:.1e}, {dt:.2f} s")


def test_c03_jacobian_suite(verdict):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    imu = vis = pg = 0.0
    for _ in range(100):
        d = propagate(_random_buffer(rng, n=21))
        s0 = BodyState(rng.normal(size=3), rng.normal(size=3), random_quat(rng))
        s1 = _perturbed(predict_state(s0, d), rng.normal(scale=0.1, size=9))
        J0, J1 = residual_jacobians(d, s0, s1)
        imu = max(imu, rel_err(J0, central_diff(lambda x: imu_residual(d, _perturbed(s0, x), s1), np.zeros(9))),
                  rel_err(J1, central_diff(lambda x: imu_residual(d, s0, _perturbed(s1, x)), np.zeros(9))))
    for _ in range(100):
        f_i, f_j, lam, pi, pj, T = _random_instance(rng)
        _, _, J = visual_residuals(f_i, f_j, lam, pi.p, pi.q, pj.p, pj.q, T.p, T.q)
        pairs = [
            (np.hstack([J.p_i[0], J.th_i[0]]),
             central_diff(lambda x: visual_residual(f_i, f_j, lam, _perturb_pose(pi, x), pj, T), np.zeros(6))),
            (np.hstack([J.p_j[0], J.th_j[0]]),
             central_diff(lambda x: visual_residual(f_i, f_j, lam, pi, _perturb_pose(pj, x), T), np.zeros(6))),
            (np.hstack([J.p_c[0], J.th_c[0]]),
             central_diff(lambda x: visual_residual(f_i, f_j, lam, pi, pj, _perturb_pose(T, x)), np.zeros(6))),
            (J.lam[0][:, None],
             central_diff(lambda x: visual_residual(f_i, f_j, lam + x[0], pi, pj, T), np.zeros(1))),
        ]
        vis = max(vis, *(rel_err(a, n) for a, n in pairs))
    for _ in range(100):
        ni, nj = _random_node(rng), _random_node(rng)
        e = PoseGraphEdge(0, 1, rng.normal(size=3), 0.0)
        e.psi_ij = float(np.angle(np.exp(1j * (nj.yaw - ni.yaw - rng.uniform(-1, 1)))))
        Ji, Jj = edge_jacobians(ni, nj, e)
        Ni = central_diff(lambda x: edge_residual(PoseGraphNode(x[:3], x[3], ni.pitch, ni.roll), nj, e),
                          np.r_[ni.p, ni.yaw])
        Nj = central_diff(lambda x: edge_residual(ni, PoseGraphNode(x[:3], x[3], nj.pitch, nj.roll), e),
                          np.r_[nj.p, nj.yaw])
        pg = max(pg, rel_err(Ji, Ni), rel_err(Jj, Nj))
    dt = time.perf_counter() - t0
    verdict(3, max(imu, vis, pg) < 1e-5 and dt < 30.0,
            f"IMU {imu:.1e}, visual {vis:.1e}, pose graph {pg:.1e} over 100 instances each, {dt:.1f} s")


def _filter_rates(pixel_sigma, seeds=range(100)):
    kept_good = n_good = dropped_moving = n_moving = 0
    exact = True
    for s in seeds:
        fp = synthesize_frame_pair(s, pixel_sigma=pixel_sigma)
        out = three_step_filter(fp.kp_id, fp.uv_prev, fp.uv_cur, fp.mask, FrontendParams(seed=s))
        moving = fp.kind == MOVING_POINT
        kept_good += int(out.kept[~moving].sum())
        n_good += int((~moving).sum())
        dropped_moving += int((~out.kept[moving]).sum())
        n_moving += int(moving.sum())
        exact &= out.psi_c == min(int(out.kept.sum()) / 250, 1.0)
    return kept_good / n_good, dropped_moving / n_moving, exact


def test_c04_frontend_filter(verdict, capsys):
    keep, reject, exact = _filter_rates(0.3)
    keep_05, reject_05, _ = _filter_rates(0.5)
    with capsys.disabled():
        print(f"\n  (info) at 0.5 px pair noise: keep {keep_05:.3f}, reject {reject_05:.3f}")
    verdict(4, keep >= 0.95 and reject >= 0.95 and exact,
            f"100 pairs at 0.3 px: keep {keep:.3f}, reject {reject:.3f}, psi_c exact {exact}")


@pytest.fixture(scope="module")
def run():
    return noiseless_run()


def test_c05_weighted_cost_identity(verdict, run):
    win = build_window(run)
    rng = np.random.default_rng(5)
    for f in win.frames:
        f.p = f.p + rng.normal(scale=0.02, size=3)
    base, weighted = win.cost(weighted=False), win.cost(weighted=True)
    same = (weighted.total, weighted.imu, weighted.visual, weighted.prior) == (base.total, base.imu, base.visual,
                                                                            base.prior)
    verdict(5, same and base.total > 0, f"weighted {weighted.total!r} vs base {base.total!r}")


def test_c06_optimizer_recovery(verdict, run):
    win = build_window(run)
    gt = {f.fid: (f.p.copy(), f.q.copy()) for f in win.frames}
    rng = np.random.default_rng(0)
    for f in win.frames:
        d, a = rng.normal(size=3), rng.normal(size=3)
        f.p = f.p + 0.05 * d / np.linalg.norm(d)
        f.q = quat_mul(so3_exp(np.deg2rad(1.0) * a / np.linalg.norm(a)), f.q)
    rep = win.solve()
    dp = max(np.linalg.norm(f.p - gt[f.fid][0]) for f in win.frames)
    dth = max(np.linalg.norm(so3_log(quat_mul(f.q, quat_inv(gt[f.fid][1])))) for f in win.frames)
    verdict(6, rep.converged and rep.iterations <= 12 and dp < 1e-4 and dth < 1e-4,
            f"{rep.iterations} iterations, position {dp:.1e} m, rotation {dth:.1e} rad")


def _gyro_gradient_check():
    import torch

    from robustvio.denoise import GroundTruthIncrements, gyro_loss

    rng = np.random.default_rng(7)
    dt = 0.1
    w_true = rng.normal(scale=0.5, size=(3, 3))
    R = [np.eye(3)]
    for k in range(2):
        R.append(R[-1] @ so3_exp_mat(w_true[k] * dt))
    gt = GroundTruthIncrements(np.zeros((3, 3)), np.zeros((3, 3)), np.array(R), dt, (2,))
    w_hat = torch.tensor(w_true + rng.normal(scale=0.3, size=(3, 3)), requires_grad=True)
    gyro_loss(w_hat, gt, dt, horizons=(2,)).backward()
    grad = w_hat.grad[1].numpy()
    fd = np.zeros(3)
    h = 1e-6
    for c in range(3):
        wp, wm = w_hat.detach().clone(), w_hat.detach().clone()
        wp[1, c] += h
        wm[1, c] -= h
        fd[c] = (gyro_loss(wp, gt, dt, (2,)).item() - gyro_loss(wm, gt, dt, (2,)).item()) / (2 * h)
    return np.linalg.norm(grad - fd) / np.linalg.norm(fd)


def test_c07_denoiser_efficacy(verdict, denoiser_run):
    td = denoiser_run["model"]
    ratios = []
    for s in denoiser_run["held"]:
        wg, wa, _ = td.model.correct_stream(s.gyro, s.accel)
        ratios.append(open_loop_drift(s, wg, wa) / open_loop_drift(s, s.gyro, s.accel))
    decreasing = bool(np.all(np.diff(td.metadata["gyro_loss"]) < 0))
    grad = _gyro_gradient_check()
    secs = denoiser_run["seconds"]
    verdict(7, max(ratios) <= 0.5 and decreasing and grad < 1e-4 and secs <= 600,
            f"drift ratio {max(ratios):.3f}, gyro loss strictly decreasing {decreasing}, "
            f"gradient check {grad:.1e}, training {secs:.0f} s")


def test_c08_loop_closure(verdict):
    truth, drifted, edges = yaw_drift_chain()
    before = np.linalg.norm(drifted[-1].p - truth[-1].p)
    out, _ = optimize_pose_graph(drifted, edges)
    reduction = 1 - np.linalg.norm(out[-1].p - truth[-1].p) / before
    rng = np.random.default_rng(8)
    pnp = 0.0
    for _ in range(10):
        cam, pose, pw, uv = _pnp_scene(rng, 20)
        pnp = max(pnp, *_pose_error(solve_pnp_ransac(pw, uv, cam, seed=1).pose_wc, pose))
    hit = revisit_hit_rate(100)
    trial = revisit_trial(5, n_keyframes=1000)
    trial.db.query(trial.query)
    t0 = time.perf_counter()
    for _ in range(20):
        trial.db.query(trial.query)
    latency = (time.perf_counter() - t0) / 20
    verdict(8, reduction >= 0.9 and pnp < 1e-6 and hit >= 0.95 and latency < 0.010,
            f"endpoint reduction {reduction:.3f}, PnP {pnp:.1e}, hit rate {hit:.2f}, "
            f"query {latency * 1e3:.2f} ms")


def test_c09_ablation_ordering(verdict, tmp_path):
    from robustvio.cli import main

    data, out = tmp_path / "data", tmp_path / "ablation"
    assert main(["simulate", "--preset", "ablation", "--out", str(data)]) == 0
    t0 = time.perf_counter()
    code = main(["ablate", "--dataset", str(data), "--out", str(out)])
    secs = time.perf_counter() - t0
    with open(out / "ablation.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    ate = {r["config"]: float(r["ate_rms_m"]) for r in rows}
    ok = (code == 0 and len(rows) == 6 and ate["SRVIO"] <= ate["VIO"] / 3 and ate["VIO+SS"] < ate["VIO"]
          and secs < 600)
    verdict(9, ok, f"ATE SRVIO {ate.get('SRVIO', float('nan')):.3f} m, VIO+SS {ate.get('VIO+SS', float('nan')):.3f} m, "
                   f"VIO {ate.get('VIO', float('nan')):.3f} m, {len(rows)} rows, {secs:.0f} s")


def test_c10_metrics_self_tests(verdict):
    n = 400
    t = np.arange(n, dtype=np.int64) * 10_000_000
    a = np.linspace(0, 3 * np.pi, n)
    p = np.column_stack([4 * np.cos(a), 4 * np.sin(a), 0.3 * np.sin(2 * a)])
    q = np.array([rot_to_quat(rot_zyx(x + np.pi / 2, 0.1 * np.sin(x), 0.0)) for x in a])
    gt = Trajectory(t, p, q)
    R = so3_exp_mat(np.array([0.2, 0.1, -2.0]))
    qR = rot_to_quat(R)
    moved = Trajectory(t, p @ R.T + [5.0, 1.0, -3.0], np.array([quat_mul(qR, x) for x in q]))
    ate = ate_rms(moved, gt)
    r, delta = 0.07, 0.5
    secs = (t - t[0]) * 1e-9
    drift = Trajectory(t, p + np.outer(r / delta * secs, [1.0, 0.0, 0.0]), q)
    rpe_t, _ = rpe_rms(drift, gt, delta_s=delta)
    verdict(10, ate < 1e-9 and abs(rpe_t - r) < 1e-9, f"rigid ATE {ate:.1e}, RPE {rpe_t!r} vs injected {r}")


def test_c11_determinism(verdict, tmp_path):
    same = cli_determinism(tmp_path)
    bad = sorted(k for k, v in same.items() if not v)
    verdict(11, bool(same) and not bad, f"{len(same)} CSV files compared, differing: {bad or 'none'}")
