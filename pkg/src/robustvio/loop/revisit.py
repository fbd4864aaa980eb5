"""Synthetic place-revisit trials for retrieval benchmarks.

Keyframes walk along a corridor of landmarks; each sees a window of them
with noisy descriptors. A revisit query re-observes a stored keyframe's
landmarks (a random subset) with fresh descriptor noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .database import DESCRIPTOR_DIM, KeyframeDatabase, KeyframeRecord, normalize_descriptors


@dataclass
class RevisitTrial:
    db: KeyframeDatabase
    query: KeyframeRecord
    truth: int


def _observe(rng, landmark_des, ids, sigma):
    des = landmark_des[ids] + rng.normal(scale=sigma, size=(len(ids), landmark_des.shape[1]))
    uv = rng.uniform([0, 0], [640, 480], size=(len(ids), 2))
    return uv, normalize_descriptors(des)


def revisit_trial(seed, n_keyframes=100, per_frame=80, stride=8, sigma=0.05, overlap=0.8, db=None):
    """Build a DB of ``n_keyframes`` places and a query revisiting one older than the exclusion window."""
    rng = np.random.default_rng([seed, 4242])
    n_landmarks = stride * (n_keyframes - 1) + per_frame
    lm = normalize_descriptors(rng.normal(size=(n_landmarks, DESCRIPTOR_DIM)))
    db = db if db is not None else KeyframeDatabase()
    for k in range(n_keyframes):
        ids = np.arange(k * stride, k * stride + per_frame)
        uv, des = _observe(rng, lm, ids, sigma)
        db.add(KeyframeRecord(k, np.array([k * 0.5, 0.0, 0.0]), np.array([1.0, 0, 0, 0]), uv, des, kp_id=ids))
    truth = int(rng.integers(0, max(1, n_keyframes - db.exclusion)))
    ids = np.arange(truth * stride, truth * stride + per_frame)
    ids = np.sort(rng.choice(ids, size=int(round(overlap * per_frame)), replace=False))
    uv, des = _observe(rng, lm, ids, sigma)
    query = KeyframeRecord(n_keyframes, np.zeros(3), np.array([1.0, 0, 0, 0]), uv, des, kp_id=ids)
    return RevisitTrial(db, query, truth)


def revisit_hit_rate(trials=100, seed=0, **kw):
    hits = 0
    for t in range(trials):
        trial = revisit_trial(seed + t, **kw)
        hits += any(c.i == trial.truth for c in trial.db.query(trial.query))
    return hits / trials
