"""End-to-end run of frontend, preintegration, optional denoising, windowed solve and loop closure."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..backend import (
    ConstantVelocityBlock,
    DegenerateFeatureError,
    FrameState,
    ImuBlock,
    Prior,
    SlidingWindow,
    SolverParams,
    triangulate,
    write_estimate,
)
from ..flatconfig import read_flat
from ..frontend import FrontendParams, frame_correspondences, single_ransac_filter, three_step_filter
from ..geometry import Pose
from ..loop import (
    LOOP,
    SEQUENTIAL,
    KeyframeDatabase,
    KeyframeRecord,
    PnPFailure,
    PoseGraphEdge,
    PoseGraphNode,
    optimize_pose_graph,
    relative_edge,
    solve_pnp_ransac,
    write_posegraph,
)
from ..preintegration import BodyState, PreintegrationBuffer, predict_state, propagate
from ..simulator import read_dataset

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e4
OK = "ok"
DIVERGED = "diverged"

REPORT_HEADER = ["frame_id", "t_ns", "tracked", "kept", "psi_c", "weight_c", "psi_b", "weight_b", "features", "iterations",
                 "status"]


class PipelineError(RuntimeError):
    """A stage failed; the message carries the frame index and module."""

    def __init__(self, frame, module, message):
        super().__init__(f"frame {frame}: {module}: {message}")
        self.frame = frame
        self.module = module


@dataclass
class PipelineConfig:
    name: str = "VIO"
    use_visual: bool = True
    use_inertial: bool = True
    semantic_filter: bool = False
    adaptive_weights: bool = False
    denoiser: bool = False
    loop_closure: bool = False
    f_max: int = 250
    epsilon: float = 1.0
    ransac_threshold: float = 1.0
    dilation_radius: int = 4
    window_size: int = 10
    max_iterations: int = 8
    huber_variant: str = "standard"
    visual_sigma_px: float = 1.5
    t_knn: int = 25
    k: int = 4
    exclusion: int = 30
    pnp_threshold_px: float = 2.0
    pnp_min_inliers: int = 12
    loop_optimize_interval: int = 10  # keyframes between graph solves while loops are pending
    descriptor_noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not (self.use_visual or self.use_inertial):
            raise ValueError("at least one of use_visual / use_inertial must be enabled")
        if self.denoiser and not self.use_inertial:
            raise ValueError("the denoiser needs inertial data")
        if self.f_max <= 0:
            raise ValueError("f_max must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict):
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValueError(f"unknown pipeline keys: {', '.join(unknown)}")
        kw = {}
        for key, v in d.items():
            kind = type(getattr(cls(), key))
            kw[key] = kind(int(v) if kind is int and isinstance(v, float) else v)
        return cls(**kw)

    @classmethod
    def from_file(cls, path, **overrides):
        d = read_flat(path)
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    @classmethod
    def named(cls, name, **kw):
        try:
            toggles = NAMED_CONFIGS[name]
        except KeyError:
            raise ValueError(f"unknown config {name!r}; choose from {', '.join(NAMED_CONFIGS)}") from None
        return cls(name=name, **toggles, **kw)


NAMED_CONFIGS = {
    "VIO": {},
    "VO+SS": {"use_inertial": False, "semantic_filter": True},
    "IO": {"use_visual": False},
    "VIO+SS": {"semantic_filter": True},
    "VIO+SS+W": {"semantic_filter": True, "adaptive_weights": True},
    "SRVIO": {"semantic_filter": True, "adaptive_weights": True, "denoiser": True, "loop_closure": True},
}


@dataclass
class FrameReport:
    frame_id: int
    t_ns: int
    tracked: int
    kept: int
    psi_c: float  # frontend score |kept| / F_max
    weight_c: float  # visual weight applied in the solve
    psi_b: float  # mean quality score over the interval (1 without a denoiser)
    weight_b: float
    features: int
    iterations: int
    status: str = OK


@dataclass
class PipelineResult:
    estimate: list  # rows (t_ns, p, q)
    frames: list[FrameReport]
    status: str
    timing: dict = field(default_factory=dict)
    loops: int = 0
    graph: tuple | None = None  # (nodes before, nodes after) when loop closure ran

    def trajectory(self):
        from .metrics import Trajectory

        t = np.array([r[0] for r in self.estimate], dtype=np.int64)
        p = np.array([r[1] for r in self.estimate], dtype=float).reshape(-1, 3)
        q = np.array([r[2] for r in self.estimate], dtype=float).reshape(-1, 4)
        return Trajectory(t, p, q)


class _Timer:
    def __init__(self):
        self.totals = {}

    def add(self, key, t0):
        self.totals[key] = self.totals.get(key, 0.0) + time.perf_counter() - t0


def _drift_apply(node_ref: PoseGraphNode, vio_ref: Pose, pose: Pose) -> PoseGraphNode:
    """Carry ``pose`` through the yaw + translation offset between a reference node and its odometry pose."""
    ref = PoseGraphNode.from_pose(vio_ref)
    nd = PoseGraphNode.from_pose(pose)
    dyaw = node_ref.yaw - ref.yaw
    c, s = np.cos(dyaw), np.sin(dyaw)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    p = node_ref.p + Rz @ (nd.p - ref.p)
    return PoseGraphNode(p, nd.yaw + dyaw, nd.pitch, nd.roll)


class _LoopCloser:
    """Keyframe database plus a 4-DOF graph over every keyframe that leaves the window."""

    def __init__(self, cfg: PipelineConfig, camera, descriptors):
        self.cfg = cfg
        self.camera = camera
        self.descriptors = descriptors
        self.db = KeyframeDatabase(k=cfg.k, t_knn=cfg.t_knn, exclusion=cfg.exclusion)
        self.vio: list[Pose] = []
        self.times: list[int] = []
        self.initial: list[PoseGraphNode] = []
        self.nodes: list[PoseGraphNode] = []
        self.edges: list[PoseGraphEdge] = []
        self.loops = 0
        self.pending = False
        self.last_solve = -10**9

    def _descriptor(self, fid, kp):
        d = self.descriptors.get(int(kp))
        if d is None:
            return None
        rng = np.random.default_rng([self.cfg.seed, int(fid), int(kp)])
        d = np.asarray(d, dtype=float) + rng.normal(scale=self.cfg.descriptor_noise, size=len(d))
        return d / np.linalg.norm(d)

    def correct(self, pose: Pose) -> Pose:
        if not self.nodes:
            return pose
        return _drift_apply(self.nodes[-1], self.vio[-1], pose).pose()

    def add_keyframe(self, fid, t_ns, pose: Pose, kps, uv, points):
        n = len(self.nodes)
        node = _drift_apply(self.nodes[-1], self.vio[-1], pose) if n else PoseGraphNode.from_pose(pose)
        if n:
            p_ij, psi_ij = relative_edge(self.vio[-1], pose)
            self.edges.append(PoseGraphEdge(n - 1, n, p_ij, psi_ij, SEQUENTIAL))
        self.vio.append(pose)
        self.times.append(t_ns)
        self.initial.append(PoseGraphNode.from_pose(pose))
        self.nodes.append(node)

        des, keep = [], []
        for c, kp in enumerate(kps):
            d = self._descriptor(fid, kp)
            if d is not None:
                des.append(d)
                keep.append(c)
        if not keep:
            return
        keep = np.array(keep)
        rec = KeyframeRecord(n, pose.p, pose.q, np.asarray(uv)[keep], np.array(des), np.asarray(points)[keep],
                             t_ns=t_ns, kp_id=np.asarray(kps)[keep])
        self._detect(rec)
        self.db.add(rec)

    def _detect(self, rec: KeyframeRecord):
        if np.isfinite(rec.points).all(axis=1).sum() >= self.cfg.pnp_min_inliers:
            self._match(rec)
        if self.pending and rec.i - self.last_solve >= self.cfg.loop_optimize_interval:
            self.optimize()

    def _match(self, rec: KeyframeRecord):
        cfg = self.cfg
        good = np.isfinite(rec.points).all(axis=1)
        for cand in self.db.query(rec):
            old = self.db.get(cand.i)
            qi, ci = cand.matches[:, 0], cand.matches[:, 1]
            sel = good[qi]
            if sel.sum() < cfg.pnp_min_inliers:
                continue
            try:
                res = solve_pnp_ransac(rec.points[qi[sel]], old.uv[ci[sel]], self.camera, seed=cfg.seed + rec.i,
                                       threshold_px=cfg.pnp_threshold_px, min_inliers=cfg.pnp_min_inliers)
            except PnPFailure:
                continue
            # the old keyframe's body pose, expressed in the current odometry frame
            old_body = res.pose_wc.compose(self.camera.T_bc.inverse())
            p_ij, psi_ij = relative_edge(old_body, Pose(rec.q, rec.p))
            self.edges.append(PoseGraphEdge(cand.i, rec.i, p_ij, psi_ij, LOOP))
            rec.j, rec.p_ij, rec.psi_ij = cand.i, p_ij, psi_ij
            self.loops += 1
            self.pending = True
            return

    def optimize(self):
        if not self.pending:
            return
        self.nodes, _ = optimize_pose_graph([dataclasses.replace(nd, p=nd.p.copy()) for nd in self.nodes], self.edges)
        self.pending = False
        self.last_solve = len(self.nodes) - 1

    def rows(self):
        return [(t, nd.pose().p, nd.pose().q) for t, nd in zip(self.times, self.nodes)]


def _world_point(win: SlidingWindow, feat):
    fr = win.frame(feat.anchor)
    return fr.pose().transform(win.T_bc.transform(feat.obs[feat.anchor] / feat.lam))


def _parallax(f_i, f_j, pose_i: Pose, pose_j: Pose, T_bc: Pose):
    d1 = pose_i.R @ T_bc.R @ f_i
    d2 = pose_j.R @ T_bc.R @ f_j
    return float(np.arccos(np.clip(d1 @ d2, -1.0, 1.0)))


def _predict_cv(state: FrameState, dt):
    return BodyState(state.p + state.v * dt, state.v.copy(), state.q.copy())


class Pipeline:
    """Frame-by-frame estimator over a loaded dataset."""

    min_parallax = np.radians(1.0)

    def __init__(self, dataset, cfg: PipelineConfig, denoiser=None):
        if cfg.denoiser and denoiser is None:
            raise PipelineError(0, "imu_denoise", "config enables the denoiser but no model was given")
        self.ds = dataset
        self.cfg = cfg
        self.denoiser = denoiser if cfg.denoiser else None
        cam = dataset.camera
        params = SolverParams(max_iterations=cfg.max_iterations, visual_sigma_px=cfg.visual_sigma_px, focal=cam.fx,
                              huber_variant=cfg.huber_variant)
        self.win = SlidingWindow(cam.T_bc, params, size=cfg.window_size)
        self.front = FrontendParams(epsilon=cfg.epsilon, ransac_threshold=cfg.ransac_threshold, f_max=cfg.f_max,
                                    dilation_radius=cfg.dilation_radius, seed=cfg.seed)
        self.loop = _LoopCloser(cfg, cam, dataset.descriptors) if cfg.loop_closure else None
        self.timer = _Timer()
        self.uv_at: dict[int, dict] = {}
        self.reports: list[FrameReport] = []
        self.history: list[tuple] = []

    # -- inertial input -------------------------------------------------------
    def _inertial(self):
        imu = self.ds.imu
        if self.denoiser is None:
            return imu.gyro, imu.accel, None
        t0 = time.perf_counter()
        wg, wa, out = self.denoiser.correct_stream(imu.gyro, imu.accel)
        self.timer.add("denoise", t0)
        return wg, wa, out.zeta

    def _psi_b(self, zeta, i0, i1):
        if zeta is None:
            return 1.0
        from ..denoise import imu_attention_weight

        return imu_attention_weight(zeta[i0 + 1:i1 + 1])

    # -- visual input ---------------------------------------------------------
    def _frontend(self, k):
        kp, uv0, uv1 = frame_correspondences(self.ds.tracks, k - 1, k)
        params = dataclasses.replace(self.front, seed=self.cfg.seed * 1_000_003 + k)
        if self.cfg.semantic_filter:
            out = three_step_filter(kp, uv0, uv1, self.ds.mask(k), params)
        else:
            out = single_ransac_filter(kp, uv0, uv1, params)
        return out, uv0, uv1

    def _observe(self, k, out, uv0, uv1):
        cam = self.ds.camera
        keep = out.kept
        kps = out.kp_id[keep]
        if len(kps) == 0:
            return
        b0 = cam.back_project(uv0[keep])
        b1 = cam.back_project(uv1[keep])
        prev = self.uv_at.setdefault(k - 1, {})
        cur = self.uv_at.setdefault(k, {})
        for kp, a, b, u0, u1 in zip(kps, b0, b1, uv0[keep], uv1[keep]):
            kp = int(kp)
            feat = self.win.features.get(kp)
            if feat is None or (k - 1) not in feat.obs:
                self.win.add_observation(kp, k - 1, a)
                prev[kp] = u0
            self.win.add_observation(kp, k, b)
            cur[kp] = u1

    def _triangulate(self, k):
        win = self.win
        fr_k = win.frame(k)
        for feat in win.features.values():
            if feat.lam is not None or k not in feat.obs or feat.anchor == k:
                continue
            fr_a = win.frame(feat.anchor)
            fa, fk = feat.obs[feat.anchor], feat.obs[k]
            if _parallax(fa, fk, fr_a.pose(), fr_k.pose(), win.T_bc) < self.min_parallax:
                continue
            try:
                lam = triangulate(fa, fk, fr_a.pose(), fr_k.pose(), win.T_bc)
            except DegenerateFeatureError:
                continue
            if win.params.min_inverse_range <= lam <= win.params.max_inverse_range:
                feat.lam = lam

    # -- keyframe exit --------------------------------------------------------
    def _retire(self):
        win = self.win
        old = win.frames[0]
        self.history.append((old.t_ns, old.p.copy(), old.q.copy()))
        if self.loop is not None:
            uv_map = self.uv_at.get(old.fid, {})
            kps, uv, pts = [], [], []
            for kp, u in sorted(uv_map.items()):
                feat = win.features.get(kp)
                kps.append(kp)
                uv.append(u)
                pts.append(_world_point(win, feat) if feat is not None and feat.lam is not None
                           and feat.anchor in win.frame_index() else np.full(3, np.nan))
            t0 = time.perf_counter()
            self.loop.add_keyframe(old.fid, old.t_ns, old.pose(), kps, np.array(uv).reshape(-1, 2),
                                   np.array(pts).reshape(-1, 3))
            self.timer.add("loop_closure", t0)
        self.uv_at.pop(old.fid, None)
        t0 = time.perf_counter()
        win.marginalize_oldest()
        self.timer.add("marginalize", t0)

    # -- main loop ------------------------------------------------------------
    def run(self) -> PipelineResult:
        ds, cfg, win = self.ds, self.cfg, self.win
        t_start = time.perf_counter()
        times = ds.frame_times()
        imu_t = ds.imu.t_ns
        idx = np.searchsorted(imu_t, times)
        if np.any(idx >= len(imu_t)) or np.any(imu_t[np.minimum(idx, len(imu_t) - 1)] != times):
            raise PipelineError(0, "preintegration", "camera timestamps do not coincide with IMU samples")
        gyro, accel, zeta = self._inertial()
        gt = ds.groundtruth
        g0 = int(np.searchsorted(gt.t_ns, times[0]))
        if g0 >= len(gt.t_ns) or gt.t_ns[g0] != times[0]:
            raise PipelineError(0, "evaluation_cli", "ground truth has no sample at the first frame")
        first = FrameState(0, int(times[0]), gt.p[g0].copy(), gt.v[g0].copy(), gt.q[g0].copy())
        win.add_frame(first)
        win.prior = Prior.on_state(first)
        self.reports.append(FrameReport(0, int(times[0]), 0, 0, 0.0, 1.0, 1.0, 1.0, 0, 0))
        noise = ds.noise
        status = OK

        for k in range(1, len(times)):
            prev = win.frames[-1]
            i0, i1 = idx[k - 1], idx[k]
            dt = (times[k] - times[k - 1]) * 1e-9
            t0 = time.perf_counter()
            try:
                if cfg.use_inertial:
                    buf = PreintegrationBuffer(imu_t[i0:i1 + 1], gyro[i0:i1 + 1], accel[i0:i1 + 1])
                    delta = propagate(buf, noise.gyro_white_sigma, noise.accel_white_sigma)
                    psi_b = self._psi_b(zeta, i0, i1)
                    w_b = psi_b if cfg.adaptive_weights else 1.0
                    block = ImuBlock(delta, w_b)
                    pred = predict_state(prev.body(), delta, win.params.gravity)
                else:
                    psi_b = w_b = 1.0
                    block = ConstantVelocityBlock(dt)
                    pred = _predict_cv(prev, dt)
            except ValueError as exc:
                raise PipelineError(k, "preintegration", str(exc)) from exc
            self.timer.add("preintegration", t0)

            tracked = kept = 0
            psi_c, w_c = 0.0, 1.0
            if cfg.use_visual:
                t0 = time.perf_counter()
                out, uv0, uv1 = self._frontend(k)
                self.timer.add("frontend", t0)
                tracked, kept = len(out.kp_id), int(out.kept.sum())
                psi_c = out.psi_c
                if cfg.adaptive_weights:
                    w_c = psi_c
            win.add_frame(FrameState(k, int(times[k]), pred.p, pred.v, pred.q, w_c), block)
            if cfg.use_visual:
                self._observe(k, out, uv0, uv1)
                self._triangulate(k)

            t0 = time.perf_counter()
            try:
                rep = win.solve()
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise PipelineError(k, "sliding_window_optimizer", str(exc)) from exc
            self.timer.add("solve", t0)
            cur = win.frames[-1]
            frame_status = OK
            if not np.all(np.isfinite(cur.p)) or np.linalg.norm(cur.p) > DIVERGENCE_LIMIT:
                frame_status = status = DIVERGED
            self.reports.append(FrameReport(k, int(times[k]), tracked, kept, psi_c, w_c, psi_b, w_b,
                                            len(win.active_features()), rep.iterations, frame_status))
            if status == DIVERGED:
                log.warning("%s: position diverged at frame %d", cfg.name, k)
                break
            if len(win.frames) > cfg.window_size:
                try:
                    self._retire()
                except (ValueError, np.linalg.LinAlgError) as exc:
                    raise PipelineError(k, "sliding_window_optimizer", str(exc)) from exc

        if self.loop is not None:
            self.loop.optimize()
            rows = self.loop.rows()
            rows += [(f.t_ns, *_rows_of(self.loop.correct(f.pose()))) for f in win.frames]
        else:
            rows = list(self.history) + [(f.t_ns, f.p.copy(), f.q.copy()) for f in win.frames]
        if status == DIVERGED:
            rows = [r for r in rows if np.all(np.isfinite(r[1]))]
        self.timer.totals["total"] = time.perf_counter() - t_start
        graph = (self.loop.initial, self.loop.nodes) if self.loop is not None else None
        return PipelineResult(rows, self.reports, status, dict(self.timer.totals),
                              self.loop.loops if self.loop else 0, graph)


def _rows_of(pose: Pose):
    return pose.p, pose.q


def run_pipeline(dataset, cfg: PipelineConfig, denoiser=None, out_dir=None) -> PipelineResult:
    """Run one configuration; ``dataset`` is a ``Dataset`` or a directory. Writes outputs when ``out_dir`` is set."""
    if not hasattr(dataset, "imu"):
        dataset = read_dataset(dataset)
    result = Pipeline(dataset, cfg, denoiser).run()
    if out_dir is not None:
        write_outputs(result, out_dir, cfg)
    return result


def write_report(path, frames):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in frames:
            w.writerow([r.frame_id, r.t_ns, r.tracked, r.kept, *(repr(float(x)) for x in (r.psi_c, r.weight_c, r.psi_b,
                                                                                           r.weight_b)),
                        r.features, r.iterations, r.status])


def write_outputs(result: PipelineResult, out_dir, cfg: PipelineConfig):
    """estimate.csv and report.csv are deterministic; wall-clock numbers go to timing.json only."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_estimate(out / "estimate.csv", result.estimate)
    write_report(out / "report.csv", result.frames)
    if result.graph is not None:
        write_posegraph(out / "posegraph.csv", *result.graph)
    timing = {"config": cfg.name, "status": result.status, "loops": result.loops,
              "seconds": {k: round(v, 6) for k, v in sorted(result.timing.items())}}
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n", encoding="utf-8")
