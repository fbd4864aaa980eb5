"""Unit-sphere reprojection residual, its Jacobians, and two-view feature initialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import quats_to_rots, skew_batch


class DegenerateFeatureError(ValueError):
    pass


def back_project(uv, camera):
    """Pixel(s) to unit bearing(s) in the camera frame."""
    b = camera.back_project(uv)
    return b[0] if np.ndim(uv) == 1 else b


def tangent_basis(bearings):
    """Orthonormal ``(b1, b2)`` spanning the plane orthogonal to each unit bearing.

    Gram-Schmidt against the x axis, or the y axis when the bearing is
    within ~25 degrees of x.
    """
    n = np.atleast_2d(bearings)
    tmp = np.zeros_like(n)
    use_y = np.abs(n[:, 0]) > 0.9
    tmp[~use_y, 0] = 1.0
    tmp[use_y, 1] = 1.0
    b1 = tmp - np.sum(tmp * n, axis=1, keepdims=True) * n
    b1 /= np.linalg.norm(b1, axis=1, keepdims=True)
    b2 = np.cross(n, b1)
    return b1, b2


@dataclass
class VisualJacobians:
    p_i: np.ndarray
    th_i: np.ndarray
    p_j: np.ndarray
    th_j: np.ndarray
    lam: np.ndarray
    p_c: np.ndarray
    th_c: np.ndarray


def visual_residuals(f_i, f_j, lam, p_i, q_i, p_j, q_j, p_bc, q_bc, jacobians=True):
    """Vectorized residual of feature ``f_i`` (anchor bearing, inverse range ``lam``) seen as ``f_j``.

    All pose arguments are either single poses or stacked per observation.
    Returns ``(r, valid, J)`` with ``r`` of shape (M, 2). Rotations are
    perturbed on the left, ``R <- exp(d) R``.
    """
    f_i = np.atleast_2d(f_i)
    f_j = np.atleast_2d(f_j)
    m = len(f_i)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (m,))
    R_i = np.broadcast_to(quats_to_rots(q_i), (m, 3, 3)) if np.ndim(q_i) == 1 else quats_to_rots(q_i)
    R_j = np.broadcast_to(quats_to_rots(q_j), (m, 3, 3)) if np.ndim(q_j) == 1 else quats_to_rots(q_j)
    R_bc = quats_to_rots(q_bc)[0]
    p_i = np.broadcast_to(p_i, (m, 3))
    p_j = np.broadcast_to(p_j, (m, 3))

    pc_i = f_i / lam[:, None]
    pb_i = pc_i @ R_bc.T + p_bc
    pw = np.einsum("nij,nj->ni", R_i, pb_i) + p_i
    dw = pw - p_j
    pb_j = np.einsum("nji,nj->ni", R_j, dw)
    pc_j = (pb_j - p_bc) @ R_bc
    norm = np.linalg.norm(pc_j, axis=1)
    valid = norm > 1e-6
    safe = np.where(valid, norm, 1.0)
    pred = pc_j / safe[:, None]

    b1, b2 = tangent_basis(f_j)
    B = np.stack([b1, b2], axis=1)  # (M, 2, 3)
    r = np.einsum("nki,ni->nk", B, pred - f_j)
    r[~valid] = 0.0
    if not jacobians:
        return r, valid, None

    eye = np.eye(3)
    Nrm = (eye - pred[:, :, None] * pred[:, None, :]) / safe[:, None, None]
    D = B @ Nrm  # d r / d pc_j
    A = D @ R_bc.T @ np.transpose(R_j, (0, 2, 1))  # d r / d pw
    J_p_i = A
    J_th_i = -A @ skew_batch(np.einsum("nij,nj->ni", R_i, pb_i))
    J_p_j = -A
    J_th_j = D @ R_bc.T @ np.transpose(R_j, (0, 2, 1)) @ skew_batch(dw)
    dpw_dlam = -np.einsum("nij,nj->ni", R_i, pc_i @ R_bc.T) / lam[:, None]
    J_lam = np.einsum("nki,ni->nk", A, dpw_dlam)
    ARi = A @ R_i
    J_p_c = ARi - D @ R_bc.T
    J_th_c = -ARi @ skew_batch(pc_i @ R_bc.T) + D @ R_bc.T @ skew_batch(pb_j - p_bc)
    for J in (J_p_i, J_th_i, J_p_j, J_th_j, J_lam, J_p_c, J_th_c):
        J[~valid] = 0.0
    return r, valid, VisualJacobians(J_p_i, J_th_i, J_p_j, J_th_j, J_lam, J_p_c, J_th_c)


def visual_residual(f_i, f_j, lam, pose_i, pose_j, T_bc):
    """Single-observation convenience wrapper; poses are ``geometry.Pose``."""
    r, valid, _ = visual_residuals(f_i, f_j, lam, pose_i.p, pose_i.q, pose_j.p, pose_j.q, T_bc.p, T_bc.q,
                                   jacobians=False)
    if not valid[0]:
        raise DegenerateFeatureError("predicted point coincides with the camera center")
    return r[0]


def triangulate(f_i, f_j, pose_i, pose_j, T_bc, min_baseline=1e-4, max_range=500.0):
    """Midpoint triangulation of two bearings; returns inverse range along ``f_i``."""
    R_wci = pose_i.R @ T_bc.R
    R_wcj = pose_j.R @ T_bc.R
    c_i = pose_i.p + pose_i.R @ T_bc.p
    c_j = pose_j.p + pose_j.R @ T_bc.p
    d1 = R_wci @ np.asarray(f_i, dtype=float)
    d2 = R_wcj @ np.asarray(f_j, dtype=float)
    base = c_j - c_i
    if np.linalg.norm(base) < min_baseline:
        raise DegenerateFeatureError("zero baseline")
    # minimize |c_i + s d1 - c_j - t d2|
    a = d1 @ d2
    den = 1.0 - a * a
    if den < 1e-12:
        raise DegenerateFeatureError("parallel rays")
    s = (base @ d1 - a * (base @ d2)) / den
    t = (a * (base @ d1) - base @ d2) / den
    if s <= 0 or t <= 0:
        raise DegenerateFeatureError("point behind a camera")
    if s > max_range:
        raise DegenerateFeatureError("point too far")
    return 1.0 / s
