"""Two-view test scenes with static points, a parked dynamic-class cluster and a moving cluster."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import so3_exp_mat
from .scene import CameraModel

STATIC_POINT, STEADY_POINT, MOVING_POINT = 0, 1, 2


@dataclass
class FramePair:
    kp_id: np.ndarray
    uv_prev: np.ndarray
    uv_cur: np.ndarray
    kind: np.ndarray  # STATIC_POINT / STEADY_POINT / MOVING_POINT
    mask: np.ndarray
    R_21: np.ndarray
    t_21: np.ndarray
    camera: CameraModel


def _cluster(rng, center, n, size=0.6):
    return center + rng.uniform(-size, size, size=(n, 3))


def synthesize_frame_pair(seed, n_static=160, n_steady=30, n_moving=30, pixel_sigma=0.5, motion=(0.2, 0.4),
                          mask_margin=6, camera: CameraModel | None = None) -> FramePair:
    """Camera-frame points seen from two poses ``X_2 = R_21 X_1 + t_21``.

    The moving cluster is displaced vertically by a random amount in
    ``motion`` (metres) between the views, so it cannot satisfy the static
    epipolar constraint of a mostly sideways camera motion.
    """
    cam = camera or CameraModel()
    rng = np.random.default_rng(seed)
    R_21 = so3_exp_mat(rng.normal(scale=0.02, size=3))
    t_21 = np.array([rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 0.4), rng.uniform(-0.05, 0.05),
                     rng.uniform(-0.1, 0.1)])

    def sample_view(n, zmin, zmax, margin=40):
        z = rng.uniform(zmin, zmax, n)
        u = rng.uniform(margin, cam.width - margin, n)
        v = rng.uniform(margin, cam.height - margin, n)
        return np.column_stack([(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z])

    static = sample_view(n_static, 3.0, 15.0)
    c_steady = sample_view(1, 5.0, 7.0, margin=120)[0]
    c_moving = sample_view(1, 4.5, 5.5, margin=120)[0]
    steady = _cluster(rng, c_steady, n_steady)
    moving = _cluster(rng, c_moving, n_moving)
    shift = rng.choice([-1.0, 1.0]) * rng.uniform(*motion)
    moving_after = moving + np.array([0.0, shift, 0.0])

    X1 = np.vstack([static, steady, moving])
    X1_after = np.vstack([static, steady, moving_after])
    X2 = X1_after @ R_21.T + t_21
    uv1 = cam.project(X1)
    uv2 = cam.project(X2)
    kind = np.r_[np.full(n_static, STATIC_POINT), np.full(n_steady, STEADY_POINT), np.full(n_moving, MOVING_POINT)]
    uv1 = uv1 + rng.normal(scale=pixel_sigma, size=uv1.shape)
    uv2 = uv2 + rng.normal(scale=pixel_sigma, size=uv2.shape)
    keep = cam.inside(uv1) & cam.inside(uv2) & (X2[:, 2] > 0.1)

    mask = np.full((cam.height, cam.width), 255, dtype=np.uint8)
    for k in (STEADY_POINT, MOVING_POINT):
        sel = keep & (kind == k)
        if not sel.any():
            continue
        lo = np.floor(uv2[sel].min(axis=0)).astype(int) - mask_margin
        hi = np.ceil(uv2[sel].max(axis=0)).astype(int) + mask_margin
        mask[max(lo[1], 0):hi[1] + 1, max(lo[0], 0):hi[0] + 1] = 0
    ids = np.flatnonzero(keep)
    return FramePair(ids, uv1[keep], uv2[keep], kind[keep], mask, R_21, t_21, cam)
