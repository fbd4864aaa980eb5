"""Camera pose from 2D-3D matches: Grunert P3P hypotheses in RANSAC, then Gauss-Newton refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Pose, rot_to_quat, skew, so3_exp_mat


class PnPFailure(ValueError):
    pass


def _rigid_fit(A, B):
    """R, t minimizing sum |B - (R A + t)|^2."""
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    U, _, Vt = np.linalg.svd((B - cb).T @ (A - ca))
    S = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ S @ Vt
    return R, cb - R @ ca


def p3p(bearings, points):
    """All world-to-camera poses ``(R, t)`` consistent with three unit bearings and world points."""
    f = np.asarray(bearings, dtype=float)
    X = np.asarray(points, dtype=float)
    a2 = np.sum((X[1] - X[2]) ** 2)
    b2 = np.sum((X[0] - X[2]) ** 2)
    c2 = np.sum((X[0] - X[1]) ** 2)
    if min(a2, b2, c2) < 1e-12:
        return []
    ca, cb, cg = f[1] @ f[2], f[0] @ f[2], f[0] @ f[1]
    amc = (a2 - c2) / b2
    apc = (a2 + c2) / b2
    A4 = (amc - 1) ** 2 - 4 * c2 / b2 * ca * ca
    A3 = 4 * (amc * (1 - amc) * cb - (1 - apc) * ca * cg + 2 * c2 / b2 * ca * ca * cb)
    A2 = 2 * (amc * amc - 1 + 2 * amc * amc * cb * cb + 2 * (b2 - c2) / b2 * ca * ca
              - 4 * apc * ca * cb * cg + 2 * (b2 - a2) / b2 * cg * cg)
    A1 = 4 * (-amc * (1 + amc) * cb + 2 * a2 / b2 * cg * cg * cb - (1 - apc) * ca * cg)
    A0 = (1 + amc) ** 2 - 4 * a2 / b2 * cg * cg
    coeffs = np.array([A4, A3, A2, A1, A0])
    if not np.all(np.isfinite(coeffs)) or abs(A4) < 1e-14:
        return []
    sols = []
    for root in np.roots(coeffs):
        if abs(root.imag) > 1e-6 * max(1.0, abs(root.real)):
            continue
        v = root.real
        den = 2 * (cg - v * ca)
        if abs(den) < 1e-12:
            continue
        u = ((-1 + amc) * v * v - 2 * amc * cb * v + 1 + amc) / den
        s1sq = b2 / (1 + v * v - 2 * v * cb)
        if s1sq <= 0 or u <= 0 or v <= 0:
            continue
        s1 = np.sqrt(s1sq)
        P = np.array([s1 * f[0], u * s1 * f[1], v * s1 * f[2]])
        R, t = _rigid_fit(X, P)
        sols.append((R, t))
    return sols


def _project(K, R, t, X):
    Pc = X @ R.T + t
    z = Pc[:, 2]
    uv = np.column_stack([K[0, 0] * Pc[:, 0] / z + K[0, 2], K[1, 1] * Pc[:, 1] / z + K[1, 2]])
    return uv, z


def reprojection_errors(K, R, t, X, uv):
    pred, z = _project(K, R, t, X)
    err = np.linalg.norm(pred - uv, axis=1)
    return np.where(z > 1e-6, err, np.inf)


def refine_pose(K, R, t, X, uv, iterations=10):
    """Gauss-Newton on pixel reprojection error, left perturbation of the world-to-camera rotation."""
    fx, fy = K[0, 0], K[1, 1]
    for _ in range(iterations):
        Pc = X @ R.T + t
        x, y, z = Pc.T
        pred = np.column_stack([fx * x / z + K[0, 2], fy * y / z + K[1, 2]])
        r = (pred - uv).ravel()
        Jp = np.zeros((len(X), 2, 3))
        Jp[:, 0, 0] = fx / z
        Jp[:, 0, 2] = -fx * x / z**2
        Jp[:, 1, 1] = fy / z
        Jp[:, 1, 2] = -fy * y / z**2
        RX = X @ R.T
        J = np.concatenate([-Jp @ _skew_rows(RX), Jp], axis=2).reshape(-1, 6)
        dx = np.linalg.lstsq(J, -r, rcond=None)[0]
        R = so3_exp_mat(dx[:3]) @ R
        t = t + dx[3:]
        if np.linalg.norm(dx) < 1e-12:
            break
    return R, t


def _skew_rows(V):
    return np.array([skew(v) for v in V])


@dataclass
class PnPResult:
    pose_wc: Pose  # camera-to-world
    inliers: np.ndarray
    R_cw: np.ndarray
    t_cw: np.ndarray


def solve_pnp_ransac(points_w, uv, camera, seed=0, threshold_px=2.0, iterations=200, min_inliers=12,
                     confidence=0.999) -> PnPResult:
    X = np.asarray(points_w, dtype=float).reshape(-1, 3)
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    n = len(X)
    if n < 4:
        raise PnPFailure(f"need at least 4 matches, got {n}")
    K = camera.K
    bear = camera.back_project(uv)
    rng = np.random.default_rng(seed)
    best = (-1, None)
    needed = iterations
    it = 0
    while it < min(iterations, needed):
        it += 1
        s = rng.choice(n, 3, replace=False)
        for R, t in p3p(bear[s], X[s]):
            inl = reprojection_errors(K, R, t, X, uv) < threshold_px
            c = int(inl.sum())
            if c > best[0]:
                best = (c, (R, t))
                w = c / n
                if w >= 1.0:
                    needed = 0
                else:
                    needed = int(np.ceil(np.log(1 - confidence) / np.log(max(1 - w ** 3, 1e-300))))
    if best[1] is None or best[0] < min_inliers:
        raise PnPFailure(f"consensus too small ({max(best[0], 0)} inliers)")
    R, t = best[1]
    inl = reprojection_errors(K, R, t, X, uv) < threshold_px
    for _ in range(3):
        R, t = refine_pose(K, R, t, X[inl], uv[inl])
        new = reprojection_errors(K, R, t, X, uv) < threshold_px
        if np.array_equal(new, inl):
            break
        inl = new
    if inl.sum() < min_inliers:
        raise PnPFailure(f"consensus too small after refinement ({int(inl.sum())} inliers)")
    R_wc = R.T
    return PnPResult(Pose(rot_to_quat(R_wc), -R_wc @ t), inl, R, t)
