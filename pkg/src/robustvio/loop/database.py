"""Keyframe database: records, mean-descriptor retrieval and on-disk storage."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .matching import Matcher, MutualNNMatcher

DESCRIPTOR_DIM = 64


class DatabaseError(ValueError):
    pass


@dataclass
class KeyframeRecord:
    """One keyframe: pose, optional loop link, and keypoints ``(uv, des)``.

    ``points`` holds world positions of keypoints whose depth is known
    (NaN rows otherwise). Keypoint arrays are stored as float32.
    """

    i: int
    p: np.ndarray
    q: np.ndarray
    uv: np.ndarray
    des: np.ndarray
    points: np.ndarray | None = None
    j: int | None = None
    p_ij: np.ndarray | None = None
    psi_ij: float | None = None
    t_ns: int = 0
    kp_id: np.ndarray | None = None

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.q = np.asarray(self.q, dtype=float).reshape(4)
        self.uv = np.asarray(self.uv, dtype=np.float32).reshape(-1, 2)
        self.des = np.asarray(self.des, dtype=np.float32).reshape(-1, DESCRIPTOR_DIM)
        n = len(self.uv)
        if len(self.des) != n:
            raise DatabaseError("uv and descriptor counts differ")
        if self.points is None:
            self.points = np.full((n, 3), np.nan, dtype=np.float32)
        self.points = np.asarray(self.points, dtype=np.float32).reshape(n, 3)
        if self.kp_id is None:
            self.kp_id = np.full(n, -1, dtype=np.int64)
        self.kp_id = np.asarray(self.kp_id, dtype=np.int64).reshape(n)
        if self.p_ij is not None:
            self.p_ij = np.asarray(self.p_ij, dtype=float).reshape(3)

    def mean_descriptor(self):
        m = self.des.astype(np.float64).mean(axis=0)
        nrm = np.linalg.norm(m)
        return m / nrm if nrm > 0 else m


def normalize_descriptors(des):
    des = np.asarray(des, dtype=np.float64)
    return des / np.maximum(np.linalg.norm(des, axis=1, keepdims=True), 1e-12)


@dataclass
class Candidate:
    i: int
    similarity: float
    matches: np.ndarray
    scores: np.ndarray


class KeyframeDatabase:
    def __init__(self, k=4, t_knn=25, exclusion=30, matcher: Matcher | None = None):
        self.k = k
        self.t_knn = t_knn
        self.exclusion = exclusion
        self.matcher = matcher or MutualNNMatcher()
        self.records: list[KeyframeRecord] = []
        self._pos: dict[int, int] = {}
        self._means = np.zeros((0, DESCRIPTOR_DIM))

    def __len__(self):
        return len(self.records)

    def add(self, rec: KeyframeRecord):
        if rec.i in self._pos:
            raise DatabaseError(f"keyframe {rec.i} already stored")
        if len(rec.des) == 0:
            raise DatabaseError(f"keyframe {rec.i} has no keypoints")
        self._pos[rec.i] = len(self.records)
        self.records.append(rec)
        if len(self.records) > len(self._means):
            grown = np.zeros((max(16, 2 * len(self._means)), DESCRIPTOR_DIM))
            grown[:len(self.records) - 1] = self._means[:len(self.records) - 1]
            self._means = grown
        self._means[len(self.records) - 1] = rec.mean_descriptor()

    def get(self, i) -> KeyframeRecord:
        return self.records[self._pos[i]]

    def query(self, rec: KeyframeRecord, k=None, t_knn=None) -> list[Candidate]:
        """K most similar keyframes older than the exclusion window that share >= T_KNN matches."""
        k = self.k if k is None else k
        t_knn = self.t_knn if t_knn is None else t_knn
        n = len(self.records) - self.exclusion
        if n <= 0 or len(rec.des) == 0:
            return []
        sims = self._means[:n] @ rec.mean_descriptor()
        k_eff = min(k, n)
        top = np.argpartition(-sims, k_eff - 1)[:k_eff]
        top = top[np.lexsort((top, -sims[top]))]
        out = []
        for pos in top:
            cand = self.records[pos]
            pairs, scores = self.matcher(rec.des, cand.des)
            if len(pairs) >= t_knn:
                out.append(Candidate(cand.i, float(sims[pos]), pairs, scores))
        return out

    # -- storage -----------------------------------------------------------
    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        offset = 0
        blobs = []
        with open(d / "records.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["i", "t_ns", "px", "py", "pz", "qw", "qx", "qy", "qz", "j", "pij_x", "pij_y", "pij_z",
                        "psi_ij", "count", "offset"])
            for r in self.records:
                loop = ["", "", "", "", ""] if r.j is None else [r.j, *map(repr, map(float, r.p_ij)), repr(float(r.psi_ij))]
                w.writerow([r.i, r.t_ns, *map(repr, map(float, r.p)), *map(repr, map(float, r.q)), *loop, len(r.uv),
                            offset])
                ids = r.kp_id.astype("<i4").view("<f4")[:, None]  # raw int32 bits in the last column
                block = np.hstack([r.uv, r.des, r.points, ids])
                blobs.append(block.astype("<f4").tobytes())
                offset += len(blobs[-1])
        (d / "descriptors.bin").write_bytes(b"".join(blobs))
        (d / "index.json").write_text(json.dumps({"k": self.k, "t_knn": self.t_knn, "exclusion": self.exclusion,
                                                  "row_floats": 2 + DESCRIPTOR_DIM + 4}), encoding="utf-8")

    @classmethod
    def load(cls, directory, matcher: Matcher | None = None):
        d = Path(directory)
        for name in ("records.csv", "descriptors.bin", "index.json"):
            if not (d / name).exists():
                raise DatabaseError(f"{name} not found")
        meta = json.loads((d / "index.json").read_text(encoding="utf-8"))
        db = cls(meta["k"], meta["t_knn"], meta["exclusion"], matcher)
        blob = (d / "descriptors.bin").read_bytes()
        width = meta["row_floats"]
        with open(d / "records.csv", encoding="utf-8") as f:
            rows = list(csv.reader(f))[1:]
        for row in rows:
            count, offset = int(row[14]), int(row[15])
            arr = np.frombuffer(blob, dtype="<f4", count=count * width, offset=offset).reshape(count, width)
            uv, des = arr[:, :2], arr[:, 2:2 + DESCRIPTOR_DIM]
            pts = arr[:, 2 + DESCRIPTOR_DIM:5 + DESCRIPTOR_DIM]
            kp = np.ascontiguousarray(arr[:, -1]).view("<i4").astype(np.int64)
            j = None if row[9] == "" else int(row[9])
            rec = KeyframeRecord(int(row[0]), [float(x) for x in row[2:5]], [float(x) for x in row[5:9]], uv, des, pts,
                                 j, None if j is None else [float(x) for x in row[10:13]],
                                 None if j is None else float(row[13]), int(row[1]), kp)
            db.add(rec)
        return db
