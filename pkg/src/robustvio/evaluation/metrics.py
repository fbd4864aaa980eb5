"""Trajectory association, alignment, ATE and RPE."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from ..geometry import quats_to_rots

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


@dataclass
class Trajectory:
    t_ns: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.t_ns = np.asarray(self.t_ns, dtype=np.int64).reshape(-1)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        self.q = np.asarray(self.q, dtype=float).reshape(-1, 4)
        if not (len(self.t_ns) == len(self.p) == len(self.q)):
            raise EvaluationError("trajectory columns have different lengths")
        if np.any(np.diff(self.t_ns) <= 0):
            raise EvaluationError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t_ns)

    def R(self):
        return quats_to_rots(self.q)

    def path_length(self):
        return float(np.sum(np.linalg.norm(np.diff(self.p, axis=0), axis=1)))

    def subset(self, idx):
        return Trajectory(self.t_ns[idx], self.p[idx], self.q[idx])


def read_trajectory(path) -> Trajectory:
    """Read ``t_ns, px, py, pz, qw, qx, qy, qz[, ...]`` rows (extra columns ignored)."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:8] != ["t_ns", "px", "py", "pz", "qw", "qx", "qy", "qz"]:
        raise EvaluationError(f"{path}: expected header t_ns,px,py,pz,qw,qx,qy,qz")
    body = [r for r in rows[1:] if r]
    if not body:
        return Trajectory(np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros((0, 4)))
    t = np.array([int(r[0]) for r in body], dtype=np.int64)
    vals = np.array([[float(x) for x in r[1:8]] for r in body])
    return Trajectory(t, vals[:, :3], vals[:, 3:7])


@dataclass
class Association:
    idx_a: np.ndarray
    idx_b: np.ndarray
    dropped_a: int
    dropped_b: int


def associate(a: Trajectory, b: Trajectory, max_dt_ns=5_000_000) -> Association:
    """Nearest-timestamp pairs within ``max_dt_ns``; each row of ``b`` used at most once."""
    if len(a) == 0 or len(b) == 0:
        raise EvaluationError("cannot associate an empty trajectory")
    pos = np.searchsorted(b.t_ns, a.t_ns)
    lo = np.clip(pos - 1, 0, len(b) - 1)
    hi = np.clip(pos, 0, len(b) - 1)
    pick = np.where(np.abs(b.t_ns[lo] - a.t_ns) <= np.abs(b.t_ns[hi] - a.t_ns), lo, hi)
    ok = np.abs(b.t_ns[pick] - a.t_ns) <= max_dt_ns
    ia = np.flatnonzero(ok)
    ib = pick[ok]
    # keep the closest row of ``a`` when two rows claim the same partner
    if len(ib):
        err = np.abs(b.t_ns[ib] - a.t_ns[ia])
        order = np.lexsort((err, ib))
        first = np.r_[True, ib[order][1:] != ib[order][:-1]]
        keep = np.sort(order[first])
        ia, ib = ia[keep], ib[keep]
    if len(ia) == 0:
        raise EvaluationError("no timestamps could be associated")
    res = Association(ia, ib, len(a) - len(ia), len(b) - len(ib))
    if res.dropped_a or res.dropped_b:
        log.info("association dropped %d / %d unpaired rows", res.dropped_a, res.dropped_b)
    return res


@dataclass
class AlignmentResult:
    s: float
    R: np.ndarray
    t: np.ndarray

    def apply(self, x):
        return self.s * np.asarray(x) @ self.R.T + self.t


def umeyama_align(a, b, with_scale=False) -> AlignmentResult:
    """Similarity (or rigid) transform minimizing ``sum |a - (s R b + t)|^2``."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if len(a) != len(b):
        raise EvaluationError("alignment needs paired points")
    if len(a) < 3:
        raise EvaluationError("alignment needs at least three pairs")
    ma, mb = a.mean(0), b.mean(0)
    A, B = a - ma, b - mb
    sv = np.linalg.svd(B, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise EvaluationError("points are collinear or coincident; alignment is degenerate")
    cov = A.T @ B / len(a)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = 1.0
    if with_scale:
        var_b = np.mean(np.sum(B * B, axis=1))
        s = float(np.trace(np.diag(D) @ S) / var_b)
    t = ma - s * R @ mb
    return AlignmentResult(s, R, t)


ALIGN_MODES = ("se3", "sim3", "none")


def _paired(est, gt, max_dt_ns):
    asc = associate(est, gt, max_dt_ns)
    return est.subset(asc.idx_a), gt.subset(asc.idx_b)


def ate_rms(est: Trajectory, gt: Trajectory, align="se3", normalize=False, max_dt_ns=5_000_000):
    if align not in ALIGN_MODES:
        raise EvaluationError(f"align must be one of {ALIGN_MODES}")
    e, g = _paired(est, gt, max_dt_ns)
    pe = e.p
    if align != "none":
        pe = umeyama_align(g.p, e.p, with_scale=align == "sim3").apply(e.p)
    rms = float(np.sqrt(np.mean(np.sum((pe - g.p) ** 2, axis=1))))
    if normalize:
        length = g.path_length()
        if length <= 0:
            raise EvaluationError("ground-truth path length is zero")
        rms /= length
    return rms


def rpe_rms(est: Trajectory, gt: Trajectory, delta_s=1.0, max_dt_ns=5_000_000):
    """Translation (m) and rotation (deg) RMS of relative-pose errors over ``delta_s``."""
    e, g = _paired(est, gt, max_dt_ns)
    t = g.t_ns
    if len(t) < 2:
        raise EvaluationError("need at least two associated poses")
    delta_ns = int(round(delta_s * 1e9))
    if delta_ns < np.min(np.diff(t)):
        raise EvaluationError("RPE delta is shorter than one sample interval")
    j = np.searchsorted(t, t + delta_ns)
    lo = np.clip(j - 1, 0, len(t) - 1)
    hi = np.clip(j, 0, len(t) - 1)
    j = np.where(np.abs(t[lo] - (t + delta_ns)) <= np.abs(t[hi] - (t + delta_ns)), lo, hi)
    i = np.arange(len(t))
    ok = (j > i) & (np.abs(t[j] - t - delta_ns) <= max_dt_ns)
    i, j = i[ok], j[ok]
    if len(i) == 0:
        raise EvaluationError("trajectory is shorter than the RPE delta")
    Re, Rg = e.R(), g.R()
    dpe = np.einsum("nji,nj->ni", Re[i], e.p[j] - e.p[i])
    dpg = np.einsum("nji,nj->ni", Rg[i], g.p[j] - g.p[i])
    dRe = np.transpose(Re[i], (0, 2, 1)) @ Re[j]
    dRg = np.transpose(Rg[i], (0, 2, 1)) @ Rg[j]
    Err = np.transpose(dRg, (0, 2, 1)) @ dRe
    # translation of the error transform G^-1 E
    terr = np.einsum("nji,nj->ni", dRg, dpe - dpg)
    v = np.stack([Err[:, 2, 1] - Err[:, 1, 2], Err[:, 0, 2] - Err[:, 2, 0], Err[:, 1, 0] - Err[:, 0, 1]], 1)
    ang = np.degrees(np.arctan2(0.5 * np.linalg.norm(v, axis=1), 0.5 * (np.trace(Err, axis1=1, axis2=2) - 1)))
    return float(np.sqrt(np.mean(np.sum(terr ** 2, axis=1)))), float(np.sqrt(np.mean(ang ** 2)))


def windowed_ate(est: Trajectory, gt: Trajectory, window_s=5.0, max_dt_ns=5_000_000):
    """Unaligned position RMS within consecutive time windows."""
    e, g = _paired(est, gt, max_dt_ns)
    err = np.linalg.norm(e.p - g.p, axis=1)
    bins = ((g.t_ns - g.t_ns[0]) // int(window_s * 1e9)).astype(int)
    return np.array([np.sqrt(np.mean(err[bins == b] ** 2)) for b in np.unique(bins)])
