"""Sliding-window state, weighted cost, Levenberg-Marquardt solve with a landmark Schur complement,
and marginalization of the oldest keyframe into a linear prior."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..geometry import (
    Pose,
    huber,
    huber_weight,
    quat_inv,
    quat_mul,
    quat_normalize,
    quat_to_rot,
    so3_exp,
    so3_left_jacobian_inv,
    so3_log,
)
from ..preintegration import GRAVITY, BodyState, PreintegratedDelta, imu_residual, residual_jacobians, sqrt_information
from .visual import visual_residuals

log = logging.getLogger(__name__)

STATE_DIM = 9  # (dp, dv, dtheta) per keyframe


@dataclass
class FrameState:
    fid: int
    t_ns: int
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    psi_c: float = 1.0

    def body(self):
        return BodyState(self.p, self.v, self.q)

    def pose(self):
        return Pose(self.q, self.p)


@dataclass
class Feature:
    kp_id: int
    anchor: int
    obs: dict = field(default_factory=dict)  # fid -> unit bearing
    lam: float | None = None


@dataclass
class ImuBlock:
    delta: PreintegratedDelta
    psi_b: float = 1.0
    sqrt_info: np.ndarray | None = None

    def __post_init__(self):
        if self.sqrt_info is None:
            self.sqrt_info = sqrt_information(self.delta.cov)


@dataclass
class ConstantVelocityBlock:
    """Motion model standing in for inertial data when it is unavailable."""

    dt: float
    sigma_p: float = 0.05
    sigma_v: float = 0.3
    sigma_th: float = 0.1
    psi_b: float = 1.0

    @property
    def sqrt_info(self):
        s = np.sqrt(max(self.dt, 1e-6))
        return np.diag(np.r_[np.full(3, 1 / (self.sigma_p * s)), np.full(3, 1 / (self.sigma_v * s)),
                             np.full(3, 1 / (self.sigma_th * s))])


def cv_residual(block: ConstantVelocityBlock, sk: BodyState, sk1: BodyState):
    dt = block.dt
    r = np.empty(9)
    r[0:3] = sk1.p - sk.p - 0.5 * (sk.v + sk1.v) * dt
    r[3:6] = sk1.v - sk.v
    r[6:9] = so3_log(quat_mul(sk1.q, quat_inv(sk.q)))
    return r


def cv_jacobians(block: ConstantVelocityBlock, sk: BodyState, sk1: BodyState):
    dt = block.dt
    phi = so3_log(quat_mul(sk1.q, quat_inv(sk.q)))
    Jl = so3_left_jacobian_inv(phi)
    Jk = np.zeros((9, 9))
    Jk1 = np.zeros((9, 9))
    Jk[0:3, 0:3] = -np.eye(3)
    Jk[0:3, 3:6] = -0.5 * dt * np.eye(3)
    Jk1[0:3, 0:3] = np.eye(3)
    Jk1[0:3, 3:6] = -0.5 * dt * np.eye(3)
    Jk[3:6, 3:6] = -np.eye(3)
    Jk1[3:6, 3:6] = np.eye(3)
    # exp(phi) exp(-d) = exp(-R d) exp(phi) with R = R1 R0^T
    Jk1[6:9, 6:9] = Jl
    Jk[6:9, 6:9] = -Jl @ quat_to_rot(quat_mul(sk1.q, quat_inv(sk.q)))
    return Jk, Jk1


@dataclass
class Prior:
    """Linear prior ``r_p + J_p (x - x_bar)`` over the states of ``fids``."""

    fids: list
    x_bar: dict  # fid -> (p, v, q)
    J: np.ndarray
    r: np.ndarray

    @classmethod
    def on_state(cls, frame: FrameState, sigma_p=1e-4, sigma_v=1e-2, sigma_th=1e-4):
        w = np.r_[np.full(3, 1 / sigma_p), np.full(3, 1 / sigma_v), np.full(3, 1 / sigma_th)]
        return cls([frame.fid], {frame.fid: (frame.p.copy(), frame.v.copy(), frame.q.copy())}, np.diag(w),
                   np.zeros(9))

    def residual(self, states: dict, jacobian=False):
        dx = np.empty(STATE_DIM * len(self.fids))
        Jc = self.J.copy() if jacobian else None
        for k, fid in enumerate(self.fids):
            p, v, q = states[fid]
            pb, vb, qb = self.x_bar[fid]
            o = STATE_DIM * k
            dx[o:o + 3] = p - pb
            dx[o + 3:o + 6] = v - vb
            phi = so3_log(quat_mul(q, quat_inv(qb)))
            dx[o + 6:o + 9] = phi
            if jacobian:
                Jc[:, o + 6:o + 9] = self.J[:, o + 6:o + 9] @ so3_left_jacobian_inv(phi)
        return self.r + self.J @ dx, Jc


@dataclass
class SolverParams:
    max_iterations: int = 12
    relative_tolerance: float = 1e-6
    max_rejections: int = 5
    time_budget: float | None = None  # seconds per solve; None keeps runs deterministic
    initial_damping: float = 1e-4
    visual_sigma_px: float = 1.5
    focal: float = 400.0
    huber_variant: str = "standard"
    robust: bool = True
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    min_inverse_range: float = 1.0 / 500.0
    max_inverse_range: float = 10.0


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    accepted: int
    message: str = ""


@dataclass
class CostBreakdown:
    prior: float
    imu: float
    visual: float

    @property
    def total(self):
        return self.prior + self.imu + self.visual


class SlidingWindow:
    """Keyframe window with motion blocks between consecutive frames and inverse-range features."""

    def __init__(self, T_bc: Pose, params: SolverParams | None = None, size=10):
        self.T_bc = T_bc
        self.params = params or SolverParams()
        self.size = size
        self.frames: list[FrameState] = []
        self.motion: dict = {}  # fid of the later frame -> block
        self.features: dict[int, Feature] = {}
        self.prior: Prior | None = None

    # -- bookkeeping -------------------------------------------------------
    def add_frame(self, frame: FrameState, block=None):
        if self.frames and block is None:
            raise ValueError("a motion block is required between consecutive keyframes")
        if block is not None:
            self.motion[frame.fid] = block
        self.frames.append(frame)

    def frame_index(self):
        return {f.fid: k for k, f in enumerate(self.frames)}

    def frame(self, fid):
        return self.frames[self.frame_index()[fid]]

    def add_observation(self, kp_id, fid, bearing):
        feat = self.features.get(kp_id)
        if feat is None:
            feat = self.features[kp_id] = Feature(kp_id, fid)
        feat.obs[fid] = np.asarray(bearing, dtype=float)

    def active_features(self):
        idx = self.frame_index()
        out = []
        for feat in self.features.values():
            if feat.lam is None or feat.anchor not in idx:
                continue
            if sum(1 for f in feat.obs if f in idx and f != feat.anchor) >= 1:
                out.append(feat)
        return out

    def states(self):
        return {f.fid: (f.p, f.v, f.q) for f in self.frames}

    # -- problem assembly --------------------------------------------------
    def _build(self, features=None):
        return _Problem(self, self.active_features() if features is None else features)

    def cost(self, weighted=True) -> CostBreakdown:
        prob = self._build()
        return prob.cost(prob.state0(), weighted=weighted)

    def solve(self) -> SolveReport:
        prob = self._build()
        report, x = prob.levenberg_marquardt()
        prob.write_back(x)
        self._drop_bad_features()
        return report

    def _drop_bad_features(self):
        p = self.params
        for kid, feat in list(self.features.items()):
            if feat.lam is not None and not (p.min_inverse_range <= feat.lam <= p.max_inverse_range):
                del self.features[kid]

    # -- marginalization ---------------------------------------------------
    def marginalize_oldest(self):
        """Fold the oldest keyframe (and features anchored there) into the prior and drop it."""
        if len(self.frames) < 2:
            raise ValueError("need at least two keyframes to marginalize")
        old = self.frames[0]
        anchored = [f for f in self.active_features() if f.anchor == old.fid]
        prob = _Problem(self, anchored, only_frame=old.fid)
        self.prior = prob.marginal_prior(old.fid)
        self._slide(old)

    def _slide(self, old: FrameState):
        self.frames.pop(0)
        self.motion.pop(self.frames[0].fid, None)
        idx = self.frame_index()
        for kid, feat in list(self.features.items()):
            f_old = feat.obs.pop(old.fid, None)
            remaining = [f for f in feat.obs if f in idx]
            if not remaining:
                del self.features[kid]
                continue
            if feat.anchor != old.fid:
                continue
            new_anchor = min(remaining, key=idx.get)
            if feat.lam is not None and f_old is not None:
                feat.lam = self._reanchor(f_old, feat.lam, old, self.frame(new_anchor))
            else:
                feat.lam = None
            feat.anchor = new_anchor

    def _reanchor(self, f_old, lam, old: FrameState, new: FrameState):
        """Inverse range of the same 3D point measured from the new anchor camera."""
        pw = old.pose().transform(self.T_bc.transform(f_old / lam))
        pc = self.T_bc.inverse().transform(new.pose().inverse().transform(pw))
        if pc[2] <= 0:
            return None
        return 1.0 / float(np.linalg.norm(pc))


class _Problem:
    """Flattened view of the window used by the solver and the marginalizer."""

    def __init__(self, win: SlidingWindow, features, only_frame=None):
        self.win = win
        self.params = win.params
        self.fids = [f.fid for f in win.frames]
        self.idx = {fid: k for k, fid in enumerate(self.fids)}
        self.n = len(self.fids)
        self.features = features
        self.only_frame = only_frame

        # motion blocks (all, or those touching only_frame)
        self.blocks = []
        for k in range(1, self.n):
            fid = self.fids[k]
            if only_frame is not None and self.fids[k - 1] != only_frame:
                continue
            if fid in win.motion:
                self.blocks.append((k - 1, k, win.motion[fid]))

        ai, oj, fi, fj, col = [], [], [], [], []
        for c, feat in enumerate(features):
            fa = feat.obs.get(feat.anchor)
            if fa is None:
                continue
            for fid, b in feat.obs.items():
                if fid == feat.anchor or fid not in self.idx:
                    continue
                ai.append(self.idx[feat.anchor])
                oj.append(self.idx[fid])
                fi.append(fa)
                fj.append(b)
                col.append(c)
        self.ai = np.array(ai, dtype=np.int64)
        self.oj = np.array(oj, dtype=np.int64)
        self.fi = np.array(fi).reshape(-1, 3)
        self.fj = np.array(fj).reshape(-1, 3)
        self.col = np.array(col, dtype=np.int64)
        self.m = len(features)
        self.use_prior = win.prior is not None and (only_frame is None or only_frame in win.prior.fids)

    # state vector: (P, V, Q, lam)
    def state0(self):
        P = np.array([f.p for f in self.win.frames], dtype=float).reshape(-1, 3)
        V = np.array([f.v for f in self.win.frames], dtype=float).reshape(-1, 3)
        Q = np.array([f.q for f in self.win.frames], dtype=float).reshape(-1, 4)
        lam = np.array([f.lam for f in self.features], dtype=float)
        return P, V, Q, lam

    def write_back(self, x):
        P, V, Q, lam = x
        for k, f in enumerate(self.win.frames):
            f.p, f.v, f.q = P[k].copy(), V[k].copy(), Q[k].copy()
        for feat, l in zip(self.features, lam):
            feat.lam = float(l)

    def _psi_c(self):
        return np.array([f.psi_c for f in self.win.frames])

    # -- residual evaluation ----------------------------------------------
    def _visual(self, x, jac):
        P, V, Q, lam = x
        if len(self.ai) == 0:
            return np.zeros((0, 2)), np.zeros(0, dtype=bool), None
        T = self.win.T_bc
        return visual_residuals(self.fi, self.fj, lam[self.col], P[self.ai], Q[self.ai], P[self.oj], Q[self.oj],
                                T.p, T.q, jacobians=jac)

    def _motion_residual(self, block, sk, sk1, jac):
        if isinstance(block, ImuBlock):
            r = imu_residual(block.delta, sk, sk1, self.params.gravity)
            J = residual_jacobians(block.delta, sk, sk1, self.params.gravity) if jac else None
        else:
            r = cv_residual(block, sk, sk1)
            J = cv_jacobians(block, sk, sk1) if jac else None
        return r, J

    def cost(self, x, weighted=True) -> CostBreakdown:
        P, V, Q, lam = x
        prior = 0.0
        if self.use_prior:
            r, _ = self.win.prior.residual(self._state_dict(x))
            prior = float(r @ r)
        imu = 0.0
        for a, b, blk in self.blocks:
            r, _ = self._motion_residual(blk, BodyState(P[a], V[a], Q[a]), BodyState(P[b], V[b], Q[b]), False)
            rr = blk.sqrt_info @ r
            term = float(rr @ rr)
            imu += blk.psi_b * term if weighted else term
        visual = 0.0
        if len(self.ai):
            r, valid, _ = self._visual(x, False)
            s = self._sv() ** 2 * np.sum(r * r, axis=1)
            rho = huber(s, self.params.huber_variant) if self.params.robust else s
            rho = np.where(valid, rho, 0.0)
            if weighted:
                visual = float(np.sum(self._psi_c()[self.oj] * rho))
            else:
                visual = float(np.sum(rho))
        return CostBreakdown(prior, imu, visual)

    def _sv(self):
        return self.params.focal / self.params.visual_sigma_px

    def _state_dict(self, x):
        P, V, Q, _ = x
        return {fid: (P[k], V[k], Q[k]) for k, fid in enumerate(self.fids)}

    def linearize(self, x):
        """Weighted Jacobian rows: ``(J_pose (R, D), J_lam (R,), lam_col (R,), r (R,))``."""
        P, V, Q, lam = x
        D = STATE_DIM * self.n
        Jp_parts, r_parts, jl_parts, col_parts = [], [], [], []

        if self.use_prior:
            pr = self.win.prior
            r, Jc = pr.residual(self._state_dict(x), jacobian=True)
            J = np.zeros((len(r), D))
            for k, fid in enumerate(pr.fids):
                o = self.idx[fid] * STATE_DIM
                J[:, o:o + STATE_DIM] = Jc[:, k * STATE_DIM:(k + 1) * STATE_DIM]
            Jp_parts.append(J)
            r_parts.append(r)
            jl_parts.append(np.zeros(len(r)))
            col_parts.append(np.full(len(r), -1))

        for a, b, blk in self.blocks:
            r, (Ja, Jb) = self._motion_residual(blk, BodyState(P[a], V[a], Q[a]), BodyState(P[b], V[b], Q[b]), True)
            w = np.sqrt(blk.psi_b) * blk.sqrt_info
            J = np.zeros((9, D))
            J[:, a * 9:a * 9 + 9] = w @ Ja
            J[:, b * 9:b * 9 + 9] = w @ Jb
            Jp_parts.append(J)
            r_parts.append(w @ r)
            jl_parts.append(np.zeros(9))
            col_parts.append(np.full(9, -1))

        if len(self.ai):
            r, valid, VJ = self._visual(x, True)
            sv = self._sv()
            s = sv * sv * np.sum(r * r, axis=1)
            rw = huber_weight(s, self.params.huber_variant) if self.params.robust else np.ones_like(s)
            w = sv * np.sqrt(self._psi_c()[self.oj] * rw) * valid
            M = len(r)
            J = np.zeros((M, 2, D))
            rows = np.arange(M)
            for k in range(3):
                J[rows, :, self.ai * 9 + k] = VJ.p_i[:, :, k]
                J[rows, :, self.ai * 9 + 6 + k] = VJ.th_i[:, :, k]
                J[rows, :, self.oj * 9 + k] = VJ.p_j[:, :, k]
                J[rows, :, self.oj * 9 + 6 + k] = VJ.th_j[:, :, k]
            J *= w[:, None, None]
            Jp_parts.append(J.reshape(2 * M, D))
            r_parts.append((r * w[:, None]).ravel())
            jl_parts.append((VJ.lam * w[:, None]).ravel())
            col_parts.append(np.repeat(self.col, 2))

        if not r_parts:
            return np.zeros((0, D)), np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0)
        return np.vstack(Jp_parts), np.concatenate(jl_parts), np.concatenate(col_parts), np.concatenate(r_parts)

    def normal_equations(self, x):
        Jp, jl, col, r = self.linearize(x)
        H_pp = Jp.T @ Jp
        g_p = Jp.T @ r
        m = self.m
        has = col >= 0
        H_ll = np.bincount(col[has], weights=jl[has] ** 2, minlength=m)
        g_l = np.bincount(col[has], weights=jl[has] * r[has], minlength=m)
        H_pl = np.zeros((Jp.shape[1], m))
        if has.any():
            np.add.at(H_pl.T, col[has], Jp[has] * jl[has, None])
        return H_pp, H_pl, H_ll, g_p, g_l

    def retract(self, x, dx, dl):
        P, V, Q, lam = x
        d = dx.reshape(self.n, STATE_DIM)
        Qn = np.array([quat_normalize(quat_mul(so3_exp(d[k, 6:9]), Q[k])) for k in range(self.n)]).reshape(-1, 4)
        return P + d[:, 0:3], V + d[:, 3:6], Qn, lam + dl

    def levenberg_marquardt(self):
        p = self.params
        x = self.state0()
        c0 = self.cost(x).total
        cost = c0
        mu = p.initial_damping
        rejections = 0
        accepted = 0
        t_start = time.perf_counter()
        system = None
        it = 0
        converged = False
        msg = ""
        while it < p.max_iterations:
            if cost <= 1e-28:
                converged = True
                msg = "zero cost"
                break
            if system is None:
                system = self.normal_equations(x)
            it += 1
            dx, dl = _solve_damped(*system, mu)
            xt = self.retract(x, dx, dl)
            if np.any(xt[3] <= 0):
                ct = np.inf
            else:
                ct = self.cost(xt).total
            if ct <= cost:
                rel = (cost - ct) / max(cost, 1e-300)
                x, cost = xt, ct
                accepted += 1
                rejections = 0
                mu = max(mu / 3.0, 1e-12)
                system = None
                if rel < p.relative_tolerance:
                    converged = True
                    msg = "relative decrease below tolerance"
                    break
            else:
                rejections += 1
                mu *= 4.0
                if rejections >= p.max_rejections:
                    msg = "non-convergence: consecutive rejected steps"
                    break
            if p.time_budget is not None and time.perf_counter() - t_start > p.time_budget:
                msg = "time budget exhausted"
                break
        if not msg:
            msg = "iteration limit"
        return SolveReport(it, c0, cost, converged, accepted, msg), x

    # -- marginalization ---------------------------------------------------
    def marginal_prior(self, fid0) -> Prior:
        x = self.state0()
        H_pp, H_pl, H_ll, g_p, g_l = self.normal_equations(x)
        # eliminate landmarks first (all belong to the marginalized set)
        inv_ll = np.where(H_ll > 1e-12, 1.0 / np.maximum(H_ll, 1e-300), 0.0)
        H = H_pp - (H_pl * inv_ll) @ H_pl.T
        g = g_p - H_pl @ (inv_ll * g_l)
        k0 = self.idx[fid0]
        m_sl = np.arange(k0 * STATE_DIM, (k0 + 1) * STATE_DIM)
        involved = set()
        if self.use_prior:
            involved |= set(self.win.prior.fids)
        for a, b, _ in self.blocks:
            involved |= {self.fids[a], self.fids[b]}
        involved |= {self.fids[j] for j in self.oj} | {self.fids[i] for i in self.ai}
        involved.discard(fid0)
        keep_fids = [f for f in self.fids if f in involved]
        k_sl = np.concatenate([np.arange(self.idx[f] * STATE_DIM, (self.idx[f] + 1) * STATE_DIM) for f in keep_fids]) \
            if keep_fids else np.zeros(0, dtype=np.int64)
        Hmm = H[np.ix_(m_sl, m_sl)]
        Hmm = 0.5 * (Hmm + Hmm.T)
        w, U = np.linalg.eigh(Hmm)
        if w.min() < 1e-8:
            log.warning("marginalized block is near singular; regularizing")
        w_inv = np.where(w > 1e-8, 1.0 / np.maximum(w, 1e-300), 0.0)
        Hmm_inv = (U * w_inv) @ U.T
        Hkm = H[np.ix_(k_sl, m_sl)]
        Hs = H[np.ix_(k_sl, k_sl)] - Hkm @ Hmm_inv @ Hkm.T
        gs = g[k_sl] - Hkm @ Hmm_inv @ g[m_sl]
        Hs = 0.5 * (Hs + Hs.T)
        w, U = np.linalg.eigh(Hs)
        keep = w > 1e-8 * max(w.max(), 1.0) if len(w) else np.zeros(0, dtype=bool)
        S = np.sqrt(w[keep])
        J = (U[:, keep] * S).T
        r = (U[:, keep].T @ gs) / S
        xb = {f: (self.win.frame(f).p.copy(), self.win.frame(f).v.copy(), self.win.frame(f).q.copy())
              for f in keep_fids}
        return Prior(keep_fids, xb, J, r)


def _solve_damped(H_pp, H_pl, H_ll, g_p, g_l, mu):
    dpp = np.maximum(np.diag(H_pp), 1e-9)
    A = H_pp + mu * np.diag(dpp)
    hl = H_ll + mu * np.maximum(H_ll, 1e-9)
    inv = 1.0 / hl
    S = A - (H_pl * inv) @ H_pl.T
    b = -g_p + H_pl @ (inv * g_l)
    S = 0.5 * (S + S.T)
    try:
        dx = np.linalg.solve(S, b)
    except np.linalg.LinAlgError:
        dx = np.linalg.lstsq(S, b, rcond=None)[0]
    dl = inv * (-g_l - H_pl.T @ dx)
    return dx, dl


def write_estimate(path, rows):
    """``rows`` of ``(t_ns, p, q)``; one line per keyframe."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t_ns", "px", "py", "pz", "qw", "qx", "qy", "qz"])
        for t, p, q in rows:
            w.writerow([int(t)] + [repr(float(a)) for a in p] + [repr(float(a)) for a in q])
