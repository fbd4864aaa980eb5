"""Fundamental-matrix estimation: normalized eight-point solver inside a seeded RANSAC loop."""

from __future__ import annotations

import math

import numpy as np

from .. import kernels
from ..geometry import skew


class DegenerateInputError(ValueError):
    pass


def _hartley(x):
    c = x.mean(axis=0)
    d = np.sqrt(((x - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def eight_point(x1, x2):
    """Normalized eight-point estimate of F with ``x2^T F x1 = 0``; rank 2, unit Frobenius norm."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if len(x1) < 8:
        raise DegenerateInputError(f"need at least 8 correspondences, got {len(x1)}")
    T1, T2 = _hartley(x1), _hartley(x2)
    a = x1 @ T1[:2, :2].T + T1[:2, 2]
    b = x2 @ T2[:2, :2].T + T2[:2, 2]
    A = np.column_stack([
        b[:, 0] * a[:, 0], b[:, 0] * a[:, 1], b[:, 0],
        b[:, 1] * a[:, 0], b[:, 1] * a[:, 1], b[:, 1],
        a[:, 0], a[:, 1], np.ones(len(a)),
    ])
    _, _, Vt = np.linalg.svd(A)
    F = Vt[-1].reshape(3, 3)
    U, S, Vt = np.linalg.svd(F)
    F = U @ np.diag([S[0], S[1], 0.0]) @ Vt
    F = T2.T @ F @ T1
    U, S, Vt = np.linalg.svd(F)
    F = U @ np.diag([S[0], S[1], 0.0]) @ Vt
    return F / np.linalg.norm(F)


def fundamental_from_poses(K, R_21, t_21):
    """F for pixels of camera 1 -> camera 2 where ``X_2 = R_21 X_1 + t_21``."""
    Kinv = np.linalg.inv(K)
    F = Kinv.T @ skew(t_21) @ R_21 @ Kinv
    return F / np.linalg.norm(F)


def estimate_fundamental_ransac(x1, x2, seed=0, inlier_threshold=1.0, iterations=200, confidence=0.99, rng=None,
                                refits=5):
    """Robust F from pixel correspondences.

    Returns ``(inliers, F)`` where ``inliers`` is a boolean mask judged by
    Sampson distance in pixels. ``rng`` overrides ``seed`` when given.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    n = len(x1)
    if n < 8:
        raise DegenerateInputError(f"need at least 8 correspondences, got {n}")
    rng = np.random.default_rng(seed) if rng is None else rng
    best_count, best_cost, best_F = -1, np.inf, None
    needed = iterations
    it = 0
    while it < min(iterations, needed):
        it += 1
        sample = rng.choice(n, 8, replace=False)
        F = eight_point(x1[sample], x2[sample])
        d = kernels.sampson_distances(F, x1, x2)
        inl = d < inlier_threshold
        count = int(inl.sum())
        cost = float(np.minimum(d, inlier_threshold).sum())
        if count > best_count or (count == best_count and cost < best_cost):
            best_count, best_cost, best_F = count, cost, F
            w = count / n
            if w >= 1.0:
                needed = 0
            elif w > 0:
                denom = math.log(max(1.0 - w ** 8, 1e-300))
                needed = int(math.ceil(math.log(1.0 - confidence) / denom)) if denom < 0 else iterations
    F = best_F
    inliers = kernels.sampson_distances(F, x1, x2) < inlier_threshold
    # refit on the consensus set until it stops growing
    for _ in range(refits):
        if inliers.sum() < 8:
            break
        F_ref = eight_point(x1[inliers], x2[inliers])
        inl_ref = kernels.sampson_distances(F_ref, x1, x2) < inlier_threshold
        if inl_ref.sum() < inliers.sum():
            break
        grew = inl_ref.sum() > inliers.sum() or not np.array_equal(inl_ref, inliers)
        F, inliers = F_ref, inl_ref
        if not grew:
            break
    return inliers, F
