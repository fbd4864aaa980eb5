"""Descriptor matching behind a small pluggable interface."""

from __future__ import annotations

from typing import Protocol

import numpy as np


class Matcher(Protocol):
    def __call__(self, des_a: np.ndarray, des_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return one-to-one index pairs ``(M, 2)`` and their scores, best first."""


class MutualNNMatcher:
    """Mutual nearest neighbours on unit descriptors with a distance ratio test."""

    def __init__(self, ratio=0.8):
        self.ratio = ratio

    def __call__(self, des_a, des_b):
        des_a = np.asarray(des_a, dtype=np.float64)
        des_b = np.asarray(des_b, dtype=np.float64)
        if len(des_a) == 0 or len(des_b) == 0:
            return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
        sim = des_a @ des_b.T
        dist = np.sqrt(np.maximum(2.0 - 2.0 * sim, 0.0))
        best_b = np.argmin(dist, axis=1)
        best_a = np.argmin(dist, axis=0)
        ia = np.arange(len(des_a))
        mutual = best_a[best_b] == ia
        if dist.shape[1] > 1:
            two = np.partition(dist, 1, axis=1)[:, :2]
            ok = two[:, 0] < self.ratio * two[:, 1]
        else:
            ok = np.ones(len(des_a), dtype=bool)
        keep = mutual & ok
        pairs = np.column_stack([ia[keep], best_b[keep]])
        scores = sim[ia[keep], best_b[keep]]
        order = np.argsort(-scores, kind="stable")
        return pairs[order], scores[order]


def match_keyframes(des_a, des_b, matcher: Matcher | None = None):
    return (matcher or MutualNNMatcher())(des_a, des_b)
