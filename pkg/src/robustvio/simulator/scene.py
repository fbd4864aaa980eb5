"""Landmarks, dynamic clusters, camera occluders and the keypoint tracks they produce."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose, quat_to_rot
from .trajectory import ConfigurationError, GroundTruth

STATIC, DYNAMIC = 0, 1

# body x forward, y left, z up; camera z along body x, camera x to the right
FORWARD_CAMERA_ROTATION = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


@dataclass
class CameraModel:
    fx: float = 400.0
    fy: float = 400.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    T_bc: Pose = field(default_factory=lambda: Pose.from_matrix(_forward_extrinsic()))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError("principal point must lie inside the image")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, pts_c):
        """Pinhole projection of camera-frame points, shape (N, 3) -> (N, 2)."""
        pts_c = np.atleast_2d(pts_c)
        z = pts_c[:, 2]
        return np.column_stack([self.fx * pts_c[:, 0] / z + self.cx, self.fy * pts_c[:, 1] / z + self.cy])

    def back_project(self, uv):
        """Pixels to unit bearings in the camera frame."""
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        b = np.column_stack([(uv[:, 0] - self.cx) / self.fx, (uv[:, 1] - self.cy) / self.fy, np.ones(len(uv))])
        return b / np.linalg.norm(b, axis=1, keepdims=True)

    def inside(self, uv):
        return (uv[:, 0] >= 0) & (uv[:, 0] < self.width) & (uv[:, 1] >= 0) & (uv[:, 1] < self.height)


def _forward_extrinsic():
    T = np.eye(4)
    T[:3, :3] = FORWARD_CAMERA_ROTATION
    T[:3, 3] = [0.05, 0.0, 0.02]
    return T


@dataclass
class DynamicCluster:
    """Rigid point cloud with a semantic class and a world-frame motion path.

    ``motion`` is ``static`` (parked), ``linear`` (constant velocity) or
    ``oscillate`` (sinusoid of ``amplitude`` along ``direction``).
    """

    count: int = 30
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    size: np.ndarray = field(default_factory=lambda: np.array([1.5, 1.5, 1.0]))
    motion: str = "static"
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    amplitude: float = 1.0
    frequency: float = 0.5
    semantic_label: int = DYNAMIC

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.size = np.asarray(self.size, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.direction = np.asarray(self.direction, dtype=float).reshape(3)
        if self.motion not in ("static", "linear", "oscillate"):
            raise ConfigurationError(f"unknown cluster motion {self.motion!r}")

    def offset(self, t):
        if self.motion == "static":
            return np.zeros(3)
        if self.motion == "linear":
            return self.velocity * t
        d = self.direction / np.linalg.norm(self.direction)
        return d * self.amplitude * math.sin(2 * math.pi * self.frequency * t)


@dataclass
class BlackoutEvent:
    """An occluder in front of the camera covering ``coverage_fraction`` of the image width.

    The occluder slides in from the left over ``ramp`` seconds, sways in
    front of the camera and carries its own (dynamic-labeled) keypoints.
    """

    t_start: float
    t_end: float
    coverage_fraction: float = 1.0
    depth: float = 1.5
    sway_amplitude: float = 0.3
    sway_period: float = 3.0
    points: int = 80
    ramp: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.coverage_fraction <= 1.0:
            raise ConfigurationError("coverage_fraction must lie in [0, 1]")
        if self.t_end <= self.t_start:
            raise ConfigurationError("blackout event must have t_end > t_start")

    def coverage(self, t):
        if t < self.t_start or t > self.t_end:
            return 0.0
        ramp = max(self.ramp, 1e-9)
        k = min(1.0, (t - self.t_start) / ramp, (self.t_end - t) / ramp)
        return self.coverage_fraction * max(k, 0.0)

    def sway(self, t):
        w = 2 * math.pi / self.sway_period
        a = self.sway_amplitude
        return np.array([a * math.sin(w * t), 0.3 * a * math.sin(0.5 * w * t + 1.0), 0.5 * a * math.sin(0.7 * w * t)])


@dataclass
class SceneSpec:
    static_count: int = 800
    bbox_min: np.ndarray = field(default_factory=lambda: np.array([-16.0, -16.0, -1.0]))
    bbox_max: np.ndarray = field(default_factory=lambda: np.array([16.0, 16.0, 4.0]))
    path_radius: float = 0.0
    path_clearance: float = 0.0
    dynamic_clusters: list = field(default_factory=list)
    blackout_events: list = field(default_factory=list)

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=float).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=float).reshape(3)

    def validate(self, duration):
        for ev in self.blackout_events:
            if ev.t_start < 0 or ev.t_end > duration:
                raise ConfigurationError("blackout event outside the trajectory duration")

    def sample_static(self, rng):
        """Uniform landmarks in the box, optionally keeping clear of a circular path."""
        pts = []
        while len(pts) < self.static_count:
            p = rng.uniform(self.bbox_min, self.bbox_max)
            if self.path_clearance > 0:
                if abs(math.hypot(p[0], p[1]) - self.path_radius) < self.path_clearance:
                    continue
            pts.append(p)
        return np.array(pts).reshape(-1, 3)


@dataclass
class TrackSet:
    """Per-frame keypoint observations; ``entity`` maps each kp_id to its source point."""

    frame_id: np.ndarray
    t_ns: np.ndarray
    kp_id: np.ndarray
    u: np.ndarray
    v: np.ndarray
    label: np.ndarray
    frame_times: np.ndarray
    kp_entity: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)
    static_points: np.ndarray | None = None

    def frame(self, fid):
        sel = self.frame_id == fid
        return self.kp_id[sel], np.column_stack([self.u[sel], self.v[sel]]), self.label[sel]


def _occluder_points(ev: BlackoutEvent, cam: CameraModel, rng):
    # spread over the full-coverage footprint at nominal depth, in occluder coordinates
    d = ev.depth
    xr = (cam.width * ev.coverage_fraction - cam.cx) * d / cam.fx
    xl = -cam.cx * d / cam.fx
    yt = -cam.cy * d / cam.fy
    yb = (cam.height - cam.cy) * d / cam.fy
    xs = rng.uniform(xl, xr, ev.points)
    ys = rng.uniform(yt, yb, ev.points)
    return np.column_stack([xs, ys, np.full(ev.points, d)])


def _occluder_extent(ev: BlackoutEvent, cam: CameraModel, t):
    """Image columns covered at time ``t`` (left edge is always the image border)."""
    c = ev.coverage(t)
    if c <= 0:
        return None
    sw = ev.sway(t)
    shift = cam.fx * sw[0] / (ev.depth + sw[2])
    right = cam.width * c + shift if c < 1.0 else np.inf
    return right


def project_tracks(truth: GroundTruth, scene: SceneSpec, cam: CameraModel, pixel_sigma=0.5, seed=0,
                   max_features=300, mask_margin=6) -> TrackSet:
    """Render keypoint observations at the camera rate.

    Each physical point receives a fresh kp_id whenever it re-enters the
    view. ``entity`` keys are ``("static", i)``, ``("cluster", c, i)`` and
    ``("occluder", e, i)``.
    """
    rng = np.random.default_rng(seed)
    static_pts = scene.sample_static(rng)
    cluster_local = [rng.uniform(-0.5, 0.5, size=(c.count, 3)) * c.size for c in scene.dynamic_clusters]
    occ_local = [_occluder_points(ev, cam, rng) for ev in scene.blackout_events]

    R_bc = cam.T_bc.R
    p_bc = cam.T_bc.p
    next_id = 0
    active = {}
    kp_entity = {}
    rows = []
    masks = {}
    frame_times = []

    for fid, idx in enumerate(truth.frame_indices()):
        t = truth.t[idx]
        t_ns = int(truth.t_ns[idx])
        frame_times.append(t_ns)
        R_wb = quat_to_rot(truth.q[idx])
        R_wc = R_wb @ R_bc
        p_wc = truth.p[idx] + R_wb @ p_bc

        ents, pts_c, labels = [], [], []
        Pc = (static_pts - p_wc) @ R_wc
        ents += [("static", i) for i in range(len(static_pts))]
        pts_c.append(Pc)
        labels.append(np.full(len(static_pts), STATIC))
        for ci, (cl, loc) in enumerate(zip(scene.dynamic_clusters, cluster_local)):
            P = cl.center + cl.offset(t) + loc
            pts_c.append((P - p_wc) @ R_wc)
            ents += [("cluster", ci, i) for i in range(len(loc))]
            labels.append(np.full(len(loc), cl.semantic_label))
        pts_c = np.vstack(pts_c)
        labels = np.concatenate(labels)

        in_front = pts_c[:, 2] > 0.1
        uv = np.full((len(pts_c), 2), -1.0)
        uv[in_front] = cam.project(pts_c[in_front])
        visible = in_front & cam.inside(uv)

        mask = np.full((cam.height, cam.width), 255, dtype=np.uint8)
        dynamic_in_view = False
        occ_uv, occ_ents = [], []
        for ei, (ev, loc) in enumerate(zip(scene.blackout_events, occ_local)):
            right = _occluder_extent(ev, cam, t)
            if right is None:
                continue
            right_px = cam.width if np.isinf(right) else int(np.clip(math.ceil(right), 0, cam.width))
            hidden = visible & (uv[:, 0] < right) & (pts_c[:, 2] > ev.depth * 0.8)
            visible &= ~hidden
            if right_px > 0:
                mask[:, :right_px] = 0
                dynamic_in_view = True
            sw = ev.sway(t)
            P = loc + sw
            ouv = cam.project(P)
            ok = cam.inside(ouv) & (ouv[:, 0] < right)
            for i in np.flatnonzero(ok):
                occ_uv.append(ouv[i])
                occ_ents.append(("occluder", ei, int(i)))

        # rasterize dynamic-class clusters as their padded bounding boxes
        start = len(static_pts)
        for ci, cl in enumerate(scene.dynamic_clusters):
            sl = slice(start, start + cl.count)
            start += cl.count
            vis = visible[sl]
            if cl.semantic_label != DYNAMIC or not np.any(vis):
                continue
            cuv = uv[sl][vis]
            u0, v0 = np.floor(cuv.min(axis=0)).astype(int) - mask_margin
            u1, v1 = np.ceil(cuv.max(axis=0)).astype(int) + mask_margin
            mask[max(v0, 0):min(v1 + 1, cam.height), max(u0, 0):min(u1 + 1, cam.width)] = 0
            dynamic_in_view = True
        if dynamic_in_view:
            masks[fid] = mask

        cand_ents = [ents[i] for i in np.flatnonzero(visible)] + occ_ents
        cand_uv = np.vstack([uv[visible]] + ([np.array(occ_uv)] if occ_uv else []))
        cand_lab = np.concatenate([labels[visible], np.full(len(occ_ents), DYNAMIC, dtype=labels.dtype)])

        # tracker capacity: keep continuing tracks first, then new ones in random order
        cont = np.array([e in active for e in cand_ents], dtype=bool)
        order = np.concatenate([np.flatnonzero(cont), rng.permutation(np.flatnonzero(~cont))])
        order = order[:max_features]

        new_active = {}
        noise = rng.normal(scale=pixel_sigma, size=(len(order), 2)) if pixel_sigma > 0 else np.zeros((len(order), 2))
        for k, i in enumerate(order):
            e = cand_ents[i]
            kid = active.get(e)
            if kid is None:
                kid = next_id
                next_id += 1
                kp_entity[kid] = e
            new_active[e] = kid
            u, v = cand_uv[i] + noise[k]
            u = min(max(u, 0.0), cam.width - 1e-6)
            v = min(max(v, 0.0), cam.height - 1e-6)
            rows.append((fid, t_ns, kid, u, v, int(cand_lab[i])))
        active = new_active

    arr = np.array(rows, dtype=object) if rows else np.zeros((0, 6), dtype=object)
    order = np.lexsort((np.array([r[2] for r in rows]), np.array([r[0] for r in rows]))) if rows else []
    arr = arr[order] if rows else arr
    return TrackSet(
        frame_id=arr[:, 0].astype(np.int64),
        t_ns=arr[:, 1].astype(np.int64),
        kp_id=arr[:, 2].astype(np.int64),
        u=arr[:, 3].astype(float),
        v=arr[:, 4].astype(float),
        label=arr[:, 5].astype(np.int64),
        frame_times=np.array(frame_times, dtype=np.int64),
        kp_entity=kp_entity,
        masks=masks,
        static_points=static_pts,
    )
