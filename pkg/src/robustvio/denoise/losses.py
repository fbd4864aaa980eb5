"""Horizon losses on rotation and gravity-free position increments (torch, batched over start index)."""

from __future__ import annotations

import numpy as np
import torch

from ..preintegration import GRAVITY


def so3_exp(phi):
    """Rodrigues map for (..., 3) rotation vectors."""
    th2 = (phi * phi).sum(-1, keepdim=True)
    th = torch.sqrt(th2 + 1e-30)
    small = th2 < 1e-8
    a = torch.where(small, 1 - th2 / 6, torch.sin(th) / th)
    b = torch.where(small, 0.5 - th2 / 24, (1 - torch.cos(th)) / (th2 + 1e-30))
    K = hat(phi)
    eye = torch.eye(3, dtype=phi.dtype).expand(K.shape)
    return eye + a[..., None] * K + b[..., None] * (K @ K)


def hat(v):
    z = torch.zeros_like(v[..., 0])
    return torch.stack([torch.stack([z, -v[..., 2], v[..., 1]], -1),
                        torch.stack([v[..., 2], z, -v[..., 0]], -1),
                        torch.stack([-v[..., 1], v[..., 0], z], -1)], -2)


def so3_log(R):
    """Rotation vectors of (..., 3, 3) matrices away from angle pi."""
    v = 0.5 * torch.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], -1)
    c = 0.5 * (R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2] - 1)
    s2 = (v * v).sum(-1)
    s = torch.sqrt(s2 + 1e-30)
    th = torch.atan2(s, c)
    small = s2 < 1e-12
    scale = torch.where(small, 1 + s2 / 6, th / s)
    return v * scale[..., None]


def huber(s, variant="standard"):
    """Huber on a squared norm ``s``: quadratic below 1, ``2 sqrt(s) - 1`` above."""
    big = s > 1
    root = torch.sqrt(torch.where(big, s, torch.ones_like(s)))
    if variant == "swapped":
        return torch.where(big, root - 0.5, 0.5 * s)
    return torch.where(big, 2 * root - 1, s)


def segment_rotations(w_hat, dt, horizon):
    """Products ``exp(w_i dt) ... exp(w_{i+h-1} dt)`` for every start ``i``; ``horizon`` a power of two."""
    R = so3_exp(w_hat * dt)
    m = 1
    while m < horizon:
        R = R[:-m] @ R[m:]
        m *= 2
    if m != horizon:
        raise ValueError("horizon must be a power of two")
    return R


def segment_increments(w_hat, a_hat, dt, horizon):
    """Batched ``(R, beta, alpha)`` over every window of ``horizon`` samples (Euler, rotation at step start)."""
    Rseg = so3_exp(w_hat * dt)
    beta = a_hat * dt
    alpha = 0.5 * a_hat * dt * dt
    m = 1
    while m < horizon:
        Ra, Rb = Rseg[:-m], Rseg[m:]
        ba, bb = beta[:-m], beta[m:]
        aa, ab = alpha[:-m], alpha[m:]
        alpha = aa + ba * (m * dt) + (Ra @ ab[..., None])[..., 0]
        beta = ba + (Ra @ bb[..., None])[..., 0]
        Rseg = Ra @ Rb
        m *= 2
    if m != horizon:
        raise ValueError("horizon must be a power of two")
    return Rseg, beta, alpha


class GroundTruthIncrements:
    """Reference rotation and gravity-free position increments of a sequence at given horizons."""

    def __init__(self, p, v, R, dt, horizons, gravity=GRAVITY):
        p, v, R = (torch.as_tensor(np.asarray(x), dtype=torch.float64) for x in (p, v, R))
        g = torch.as_tensor(np.asarray(gravity), dtype=torch.float64)
        self.rot, self.pos = {}, {}
        for h in horizons:
            T = h * dt
            self.rot[h] = R[:-h].transpose(1, 2) @ R[h:]
            d = p[h:] - p[:-h] - v[:-h] * T - 0.5 * g * T * T
            self.pos[h] = (R[:-h].transpose(1, 2) @ d[..., None])[..., 0]


def gyro_loss(w_hat, gt: GroundTruthIncrements, dt, horizons=(16, 32), variant="standard"):
    """Sum over horizons of the mean Huber of squared rotation-increment errors."""
    total = w_hat.new_zeros(())
    for h in horizons:
        Rh = segment_rotations(w_hat, dt, h)
        n = min(len(Rh), len(gt.rot[h]))
        e = so3_log(gt.rot[h][:n] @ Rh[:n].transpose(1, 2))
        total = total + huber((e * e).sum(-1), variant).mean()
    return total


def accel_loss(w_hat, a_hat, gt: GroundTruthIncrements, dt, horizons=(16, 32), variant="standard"):
    total = a_hat.new_zeros(())
    for h in horizons:
        _, _, alpha = segment_increments(w_hat, a_hat, dt, h)
        n = min(len(alpha), len(gt.pos[h]))
        e = gt.pos[h][:n] - alpha[:n]
        total = total + huber((e * e).sum(-1), variant).mean()
    return total
