"""Dataset directory layout (CSV + PGM masks) and its lossless reader/writer."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..flatconfig import parse_flat, write_flat
from ..geometry import Pose
from .imu import ImuNoiseModel, ImuStream
from .scene import CameraModel

DESCRIPTOR_DIM = 64

IMU_HEADER = "t_ns,wx,wy,wz,ax,ay,az"
TRACKS_HEADER = "frame_id,t_ns,kp_id,u_px,v_px,semantic_label"
GT_HEADER = "t_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz"


class DatasetError(IOError):
    pass


@dataclass
class Tracks:
    frame_id: np.ndarray
    t_ns: np.ndarray
    kp_id: np.ndarray
    u: np.ndarray
    v: np.ndarray
    label: np.ndarray

    def __len__(self):
        return len(self.kp_id)

    def frame_ids(self):
        return np.unique(self.frame_id)


@dataclass
class GroundTruthTable:
    t_ns: np.ndarray
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray


@dataclass
class Dataset:
    imu: ImuStream
    tracks: Tracks
    groundtruth: GroundTruthTable
    camera: CameraModel
    noise: ImuNoiseModel
    masks: dict = field(default_factory=dict)
    descriptors: dict = field(default_factory=dict)
    scenario: dict = field(default_factory=dict)
    path: Path | None = None

    def frame_times(self):
        """Camera timestamps indexed by frame id."""
        fids, first = np.unique(self.tracks.frame_id, return_index=True)
        times = self.tracks.t_ns[first]
        if "frame_count" in self.scenario:
            n = int(self.scenario["frame_count"])
            stride = int(self.scenario["imu_rate"]) // int(self.scenario["cam_rate"])
            return self.imu.t_ns[np.arange(n) * stride]
        out = np.zeros(fids.max() + 1, dtype=np.int64)
        out[fids] = times
        return out

    def mask(self, fid):
        """Binary mask (255 static) for a frame; frames without a file are all static."""
        m = self.masks.get(int(fid))
        if m is None:
            return np.full((self.camera.height, self.camera.width), 255, dtype=np.uint8)
        return m


def _fmt(x):
    return repr(float(x))


def _write_rows(path, header, cols, kinds):
    buf = io.StringIO()
    buf.write(header + "\n")
    n = len(cols[0])
    conv = [(lambda a: [str(int(x)) for x in a]) if k == "i" else (lambda a: [_fmt(x) for x in a]) for k in kinds]
    strs = [c(col) for c, col in zip(conv, cols)]
    for i in range(n):
        buf.write(",".join(s[i] for s in strs))
        buf.write("\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _read_table(path, ncols, kinds):
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path.name} not found")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DatasetError(f"{path.name}: empty file (missing header)")
    cols = [[] for _ in range(ncols)]
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != ncols:
            raise DatasetError(f"{path.name}:{lineno}: expected {ncols} fields, got {len(parts)}")
        try:
            for c, (k, s) in enumerate(zip(kinds, parts)):
                cols[c].append(int(s) if k == "i" else float(s))
        except ValueError as exc:
            raise DatasetError(f"{path.name}:{lineno}: {exc}") from None
    return [np.array(c, dtype=np.int64 if k == "i" else float) for c, k in zip(cols, kinds)]


def write_pgm(path, img):
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise DatasetError(f"{Path(path).name}: not a binary PGM (P5) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise DatasetError(f"{Path(path).name}: only 8-bit PGM supported")
    pos += 1
    pix = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8)
    if pix.size != w * h:
        raise DatasetError(f"{Path(path).name}: truncated pixel data")
    return pix.reshape(h, w).copy()


_NOISE_ROWS = [
    ("gyro_scale", 9), ("gyro_misalignment", 9), ("accel_scale", 9), ("accel_misalignment", 9),
    ("gyro_bias_init", 3), ("accel_bias_init", 3),
    ("gyro_white_sigma", 1), ("accel_white_sigma", 1), ("gyro_walk_sigma", 1), ("accel_walk_sigma", 1),
]


def write_calib(path, cam: CameraModel, noise: ImuNoiseModel):
    lines = ["fx,fy,cx,cy,width,height",
             ",".join([_fmt(cam.fx), _fmt(cam.fy), _fmt(cam.cx), _fmt(cam.cy), str(cam.width), str(cam.height)]),
             "px,py,pz,qw,qx,qy,qz",
             ",".join(_fmt(x) for x in np.r_[cam.T_bc.p, cam.T_bc.q]),
             "name,values"]
    for name, _ in _NOISE_ROWS:
        vals = np.ravel(getattr(noise, name))
        lines.append(",".join([name] + [_fmt(x) for x in vals]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_calib(path):
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path.name} not found")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    try:
        fx, fy, cx, cy, w, h = lines[1].split(",")
        pose = [float(x) for x in lines[3].split(",")]
        if len(pose) != 7:
            raise ValueError("body-to-camera row needs 7 values")
        T_bc = Pose(np.array(pose[3:]), np.array(pose[:3]))
        T_bc.q = np.array(pose[3:])  # keep stored values bit-exact
        cam = CameraModel(float(fx), float(fy), float(cx), float(cy), int(w), int(h), T_bc)
        kw = {}
        for lineno, line in enumerate(lines[5:], start=6):
            parts = line.split(",")
            vals = np.array([float(x) for x in parts[1:]])
            size = dict(_NOISE_ROWS)[parts[0]]
            if vals.size != size:
                raise ValueError(f"line {lineno}: {parts[0]} needs {size} values")
            kw[parts[0]] = vals.reshape(3, 3) if size == 9 else (vals if size == 3 else float(vals[0]))
        noise = ImuNoiseModel(**kw)
    except (ValueError, IndexError, KeyError) as exc:
        raise DatasetError(f"{path.name}: {exc}") from None
    return cam, noise


def write_dataset(ds: Dataset, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "masks").mkdir(exist_ok=True)
    imu = ds.imu
    _write_rows(d / "imu.csv", IMU_HEADER, [imu.t_ns, *imu.gyro.T, *imu.accel.T], "i" + "f" * 6)
    tr = ds.tracks
    _write_rows(d / "tracks.csv", TRACKS_HEADER, [tr.frame_id, tr.t_ns, tr.kp_id, tr.u, tr.v, tr.label], "iiiffi")
    gt = ds.groundtruth
    _write_rows(d / "groundtruth.csv", GT_HEADER, [gt.t_ns, *gt.p.T, *gt.q.T, *gt.v.T], "i" + "f" * 10)
    write_calib(d / "calib.csv", ds.camera, ds.noise)
    for fid in sorted(ds.masks):
        write_pgm(d / "masks" / f"frame_{fid}.pgm", ds.masks[fid])
    if ds.descriptors:
        ids = np.array(sorted(ds.descriptors), dtype=np.int64)
        mat = np.array([ds.descriptors[i] for i in ids])
        header = "kp_id," + ",".join(f"d{i}" for i in range(mat.shape[1]))
        _write_rows(d / "descriptors.csv", header, [ids, *mat.T], "i" + "f" * mat.shape[1])
    write_flat(d / "scenario.toml", ds.scenario, header="scenario echo (flat key = value)")
    return d


def read_dataset(directory) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"dataset directory {d} not found")
    t, wx, wy, wz, ax, ay, az = _read_table(d / "imu.csv", 7, "i" + "f" * 6)
    imu = ImuStream(t, np.column_stack([wx, wy, wz]), np.column_stack([ax, ay, az]))
    tracks = Tracks(*_read_table(d / "tracks.csv", 6, "iiiffi"))
    g = _read_table(d / "groundtruth.csv", 11, "i" + "f" * 10)
    gt = GroundTruthTable(g[0], np.column_stack(g[1:4]), np.column_stack(g[4:8]), np.column_stack(g[8:11]))
    cam, noise = read_calib(d / "calib.csv")
    masks = {}
    mdir = d / "masks"
    if mdir.is_dir():
        for f in mdir.glob("frame_*.pgm"):
            fid = int(f.stem.split("_", 1)[1])
            m = read_pgm(f)
            if m.shape != (cam.height, cam.width):
                raise DatasetError(f"{f.name}: mask resolution {m.shape} does not match the camera")
            masks[fid] = m
    descriptors = {}
    if (d / "descriptors.csv").exists():
        first = (d / "descriptors.csv").read_text(encoding="utf-8").split("\n", 1)[0]
        ncol = len(first.split(","))
        cols = _read_table(d / "descriptors.csv", ncol, "i" + "f" * (ncol - 1))
        mat = np.column_stack(cols[1:])
        descriptors = {int(k): mat[i] for i, k in enumerate(cols[0])}
    scenario = {}
    if (d / "scenario.toml").exists():
        scenario = parse_flat((d / "scenario.toml").read_text(encoding="utf-8"), "scenario.toml")
    return Dataset(imu, tracks, gt, cam, noise, masks, descriptors, scenario, d)
