"""Yaw-and-translation pose graph with pitch and roll held at the estimator's values."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from ..geometry import Pose, euler_zyx, rot_to_quat, rot_zyx, wrap_angle

log = logging.getLogger(__name__)

SEQUENTIAL, LOOP = "sequential", "loop"


class GraphError(ValueError):
    pass


@dataclass
class PoseGraphNode:
    p: np.ndarray
    yaw: float
    pitch: float
    roll: float

    @classmethod
    def from_pose(cls, pose: Pose):
        yaw, pitch, roll = euler_zyx(pose.R)
        if abs(pitch) > math.radians(89.0):
            log.warning("pitch %.1f deg is close to gimbal lock; yaw is poorly defined", math.degrees(pitch))
        return cls(np.array(pose.p, dtype=float), wrap_angle(yaw), pitch, roll)

    def rotation(self):
        return rot_zyx(self.yaw, self.pitch, self.roll)

    def pose(self):
        return Pose(rot_to_quat(self.rotation()), self.p.copy())


@dataclass
class PoseGraphEdge:
    i: int
    j: int
    p_ij: np.ndarray
    psi_ij: float
    kind: str = SEQUENTIAL

    def __post_init__(self):
        if self.i == self.j:
            raise GraphError("edge endpoints must differ")
        self.p_ij = np.asarray(self.p_ij, dtype=float).reshape(3)


def relative_edge(pose_i: Pose, pose_j: Pose):
    """``(R_i^T (p_j - p_i), psi_j - psi_i)`` with yaw from the ZYX decomposition."""
    ni, nj = PoseGraphNode.from_pose(pose_i), PoseGraphNode.from_pose(pose_j)
    return pose_i.R.T @ (np.asarray(pose_j.p) - np.asarray(pose_i.p)), wrap_angle(nj.yaw - ni.yaw)


def _dRz(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def edge_residual(ni: PoseGraphNode, nj: PoseGraphNode, e: PoseGraphEdge):
    r = np.empty(4)
    r[:3] = ni.rotation().T @ (nj.p - ni.p) - e.p_ij
    r[3] = wrap_angle(nj.yaw - ni.yaw - e.psi_ij)
    return r


def edge_jacobians(ni: PoseGraphNode, nj: PoseGraphNode, e: PoseGraphEdge):
    """Jacobians w.r.t. ``(p_i, yaw_i)`` and ``(p_j, yaw_j)``, each 4x4."""
    Rt = ni.rotation().T
    Ryx = rot_zyx(0.0, ni.pitch, ni.roll)
    dRt = Ryx.T @ _dRz(ni.yaw).T
    Ji = np.zeros((4, 4))
    Jj = np.zeros((4, 4))
    Ji[:3, :3] = -Rt
    Ji[:3, 3] = dRt @ (nj.p - ni.p)
    Ji[3, 3] = -1.0
    Jj[:3, :3] = Rt
    Jj[3, 3] = 1.0
    return Ji, Jj


def graph_rms(nodes, edges):
    if not edges:
        return 0.0
    r = np.concatenate([edge_residual(nodes[e.i], nodes[e.j], e) for e in edges])
    return float(np.sqrt(np.mean(r * r)))


def check_connected(n, edges):
    if n <= 1:
        return
    rows = [e.i for e in edges]
    cols = [e.j for e in edges]
    A = sparse.coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
    ncomp, labels = connected_components(A, directed=False)
    if ncomp > 1:
        comps = [sorted(np.flatnonzero(labels == c).tolist()) for c in range(ncomp)]
        desc = "; ".join(f"[{c[0]}..{c[-1]}] ({len(c)} nodes)" if len(c) > 3 else str(c) for c in comps)
        raise GraphError(f"pose graph is disconnected into {ncomp} components: {desc}")


def optimize_pose_graph(nodes, edges, max_iterations=20, tol=1e-10, fixed=0):
    """Gauss-Newton over ``(p, yaw)`` of every node except ``fixed``; returns new nodes and iterations."""
    nodes = [PoseGraphNode(n.p.copy(), n.yaw, n.pitch, n.roll) for n in nodes]
    n = len(nodes)
    if n <= 1 or not edges:
        return nodes, 0
    check_connected(n, edges)
    free = [k for k in range(n) if k != fixed]
    col = {k: 4 * c for c, k in enumerate(free)}
    dim = 4 * len(free)
    cost = graph_rms(nodes, edges)
    it = 0
    for it in range(1, max_iterations + 1):
        if cost < 1e-15:
            it -= 1
            break
        rows, cols, vals = [], [], []
        rvec = np.empty(4 * len(edges))
        for k, e in enumerate(edges):
            rvec[4 * k:4 * k + 4] = edge_residual(nodes[e.i], nodes[e.j], e)
            Ji, Jj = edge_jacobians(nodes[e.i], nodes[e.j], e)
            for node, J in ((e.i, Ji), (e.j, Jj)):
                if node == fixed:
                    continue
                rr, cc = np.meshgrid(np.arange(4 * k, 4 * k + 4), np.arange(col[node], col[node] + 4), indexing="ij")
                rows.append(rr.ravel())
                cols.append(cc.ravel())
                vals.append(J.ravel())
        J = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(len(rvec), dim))
        H = (J.T @ J).tocsc() + sparse.identity(dim, format="csc") * 1e-12
        dx = spsolve(H, -(J.T @ rvec))
        step = 1.0
        while step > 1e-4:
            trial = [PoseGraphNode(nd.p.copy(), nd.yaw, nd.pitch, nd.roll) for nd in nodes]
            for k in free:
                d = dx[col[k]:col[k] + 4] * step
                trial[k].p = trial[k].p + d[:3]
                trial[k].yaw = wrap_angle(trial[k].yaw + d[3])
            new_cost = graph_rms(trial, edges)
            if new_cost <= cost:
                break
            step *= 0.5
        else:
            break
        improvement = cost - new_cost
        nodes, cost = trial, new_cost
        if np.linalg.norm(dx) * step < tol or improvement <= tol * max(cost, 1e-300):
            break
    return nodes, it


def write_posegraph(path, before, after):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["node", "px_before", "py_before", "pz_before", "yaw_before", "px_after", "py_after", "pz_after",
                    "yaw_after"])
        for k, (a, b) in enumerate(zip(before, after)):
            w.writerow([k, *map(repr, map(float, a.p)), repr(float(a.yaw)), *map(repr, map(float, b.p)),
                        repr(float(b.yaw))])
