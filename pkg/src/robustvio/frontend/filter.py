"""Semantic partition, epipolar re-admission and the three-step keypoint filter."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .. import kernels
from .epipolar import DegenerateInputError, estimate_fundamental_ransac

log = logging.getLogger(__name__)

KEPT = "kept"
FILTERED_DYNAMIC = "filtered_dynamic"
RANSAC_OUTLIER = "ransac_outlier"


@dataclass
class FrontendParams:
    epsilon: float = 1.0
    ransac_threshold: float = 1.0
    iterations: int = 200
    confidence: float = 0.99
    f_max: int = 250
    dilation_radius: int = 4
    seed: int = 0


@dataclass
class FrontendOutput:
    kp_id: np.ndarray
    status: np.ndarray
    psi_c: float
    F: np.ndarray | None
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def kept(self):
        return self.status == KEPT

    @property
    def kept_ids(self):
        return self.kp_id[self.kept]


def dilate_mask(mask, radius):
    """Grow the dynamic (0) region of a 255/0 mask by a disk of ``radius`` pixels."""
    if radius < 0:
        raise ValueError("dilation radius must be non-negative")
    mask = np.asarray(mask, dtype=np.uint8)
    if radius == 0:
        return mask.copy()
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    disk = xx * xx + yy * yy <= radius * radius
    dyn = ndimage.binary_dilation(mask == 0, structure=disk)
    return np.where(dyn, 0, 255).astype(np.uint8)


def semantic_partition(uv, mask):
    """Label current-frame pixels by mask lookup.

    Returns boolean arrays ``(static, dynamic, out_of_bounds)``.
    """
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    h, w = mask.shape
    col = np.floor(uv[:, 0]).astype(np.int64)
    row = np.floor(uv[:, 1]).astype(np.int64)
    oob = (col < 0) | (col >= w) | (row < 0) | (row >= h) | ~np.isfinite(uv).all(axis=1)
    static = np.zeros(len(uv), dtype=bool)
    ok = ~oob
    static[ok] = mask[row[ok], col[ok]] == 255
    if oob.any():
        log.debug("dropping %d out-of-bounds keypoints", int(oob.sum()))
    return static, ok & ~static, oob


def epipolar_readmission(x1, x2, F, epsilon=1.0):
    """Keypoints whose Sampson distance under ``F`` is below ``epsilon`` pixels."""
    if len(x1) == 0:
        return np.zeros(0, dtype=bool)
    return kernels.sampson_distances(F, x1, x2) < epsilon


def _output(kp_id, status, labels, F, f_max):
    n_kept = int(np.sum(status == KEPT))
    psi = min(n_kept / f_max, 1.0) if f_max > 0 else 0.0
    return FrontendOutput(np.asarray(kp_id), status, psi, F, labels)


def three_step_filter(kp_id, uv_prev, uv_cur, mask, params: FrontendParams | None = None):
    """Static-only RANSAC, epipolar re-admission over all points, then RANSAC on the re-admitted set."""
    p = params or FrontendParams()
    uv_prev = np.asarray(uv_prev, dtype=float).reshape(-1, 2)
    uv_cur = np.asarray(uv_cur, dtype=float).reshape(-1, 2)
    n = len(uv_cur)
    rng = np.random.default_rng(p.seed)
    mask = dilate_mask(mask, p.dilation_radius)
    static, dynamic, oob = semantic_partition(uv_cur, mask)
    labels = dynamic.astype(np.int64)
    status = np.full(n, RANSAC_OUTLIER, dtype=object)
    status[dynamic] = FILTERED_DYNAMIC

    s_idx = np.flatnonzero(static)
    try:
        _, F_init = estimate_fundamental_ransac(uv_prev[s_idx], uv_cur[s_idx], inlier_threshold=p.ransac_threshold,
                                                iterations=p.iterations, confidence=p.confidence, rng=rng)
    except DegenerateInputError:
        return _output(kp_id, status, labels, None, p.f_max)

    valid = np.flatnonzero(~oob)
    readmit = valid[epipolar_readmission(uv_prev[valid], uv_cur[valid], F_init, p.epsilon)]
    try:
        inl, F_acc = estimate_fundamental_ransac(uv_prev[readmit], uv_cur[readmit],
                                                 inlier_threshold=p.ransac_threshold, iterations=p.iterations,
                                                 confidence=p.confidence, rng=rng)
    except DegenerateInputError:
        return _output(kp_id, status, labels, F_init, p.f_max)
    status[readmit[inl]] = KEPT
    return _output(kp_id, status, labels, F_acc, p.f_max)


def single_ransac_filter(kp_id, uv_prev, uv_cur, params: FrontendParams | None = None):
    """Baseline outlier rejection: one RANSAC over every keypoint, no semantics."""
    p = params or FrontendParams()
    uv_prev = np.asarray(uv_prev, dtype=float).reshape(-1, 2)
    uv_cur = np.asarray(uv_cur, dtype=float).reshape(-1, 2)
    status = np.full(len(uv_cur), RANSAC_OUTLIER, dtype=object)
    labels = np.zeros(len(uv_cur), dtype=np.int64)
    try:
        inl, F = estimate_fundamental_ransac(uv_prev, uv_cur, seed=p.seed, inlier_threshold=p.ransac_threshold,
                                             iterations=p.iterations, confidence=p.confidence)
    except DegenerateInputError:
        return _output(kp_id, status, labels, None, p.f_max)
    status[inl] = KEPT
    return _output(kp_id, status, labels, F, p.f_max)


def frame_correspondences(tracks, fid_prev, fid_cur):
    """Keypoints tracked from ``fid_prev`` into ``fid_cur``: ``(kp_id, uv_prev, uv_cur)``."""
    k0, uv0, _ = _frame(tracks, fid_prev)
    k1, uv1, _ = _frame(tracks, fid_cur)
    common, i0, i1 = np.intersect1d(k0, k1, return_indices=True)
    return common, uv0[i0], uv1[i1]


def _frame(tracks, fid):
    sel = tracks.frame_id == fid
    return tracks.kp_id[sel], np.column_stack([tracks.u[sel], tracks.v[sel]]), tracks.label[sel]


def write_frontend_debug(path, records):
    """``records`` is an iterable of ``(frame_id, FrontendOutput)``."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["frame_id", "kp_id", "status"])
        for fid, out in records:
            for k, s in zip(out.kp_id, out.status):
                w.writerow([int(fid), int(k), s])
