"""Two-stage training: corrections first, then the quality heads on noise-augmented inputs."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..geometry import quats_to_rots
from ..preintegration import GRAVITY
from ..simulator import ImuNoiseModel, TrajectorySpec, generate_trajectory, synthesize_imu
from ..simulator.trajectory import ConfigurationError
from .losses import GroundTruthIncrements, accel_loss, gyro_loss, so3_exp
from .model import ACCEL, GYRO, Denoiser, DenoiserConfig

log = logging.getLogger(__name__)


class TrainingOrderError(RuntimeError):
    pass


@dataclass
class ImuSequence:
    """Raw IMU with reference states sampled at the same instants."""

    dt: float
    gyro: np.ndarray
    accel: np.ndarray
    p: np.ndarray
    v: np.ndarray
    R: np.ndarray
    gyro_sigma: float = 0.0
    accel_sigma: float = 0.0

    def __len__(self):
        return len(self.gyro)

    @classmethod
    def from_dataset(cls, ds):
        gt = ds.groundtruth
        if gt is None or len(gt.t_ns) == 0:
            raise ConfigurationError("dataset has no ground truth")
        if len(gt.t_ns) != len(ds.imu.t_ns) or np.any(gt.t_ns != ds.imu.t_ns):
            raise ConfigurationError("ground truth must be sampled at the IMU timestamps")
        dt = float(np.diff(ds.imu.t_ns).mean()) * 1e-9
        return cls(dt, ds.imu.gyro, ds.imu.accel, gt.p, gt.v, quats_to_rots(gt.q),
                   ds.noise.gyro_white_sigma / math.sqrt(dt), ds.noise.accel_white_sigma / math.sqrt(dt))

    @classmethod
    def from_truth(cls, truth, imu, noise: ImuNoiseModel):
        dt = float(np.diff(truth.t_ns).mean()) * 1e-9
        return cls(dt, imu.gyro, imu.accel, truth.p, truth.v, quats_to_rots(truth.q),
                   noise.gyro_white_sigma / math.sqrt(dt), noise.accel_white_sigma / math.sqrt(dt))

    def raw(self):
        return torch.as_tensor(np.hstack([self.gyro, self.accel]), dtype=torch.float32)


def synthetic_sequences(seed=0, count=3, duration=60.0, noise: ImuNoiseModel | None = None):
    """IMU-only sequences of one simulated sensor over varied trajectories."""
    noise = noise or ImuNoiseModel.consumer_grade()
    rng = np.random.default_rng([seed, 77])
    kinds = ("circle", "figure-eight", "waypoint-spline")
    out = []
    for k in range(count):
        kind = kinds[k % len(kinds)]
        wp = []
        if kind == "waypoint-spline":
            # jittered loop ordered by angle keeps the spline free of cusps
            ang = np.linspace(0, 2 * np.pi, 7)[:-1] + rng.uniform(-0.2, 0.2, 6)
            rad = rng.uniform(4, 7, 6)
            wp = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]).tolist()
        spec = TrajectorySpec(kind=kind, duration=duration, seed=seed + k, radius=float(rng.uniform(3, 7)),
                              angular_speed=float(rng.uniform(0.25, 0.5)) * (1 if k % 2 == 0 else -1),
                              vertical_amplitude=float(rng.uniform(0.1, 0.5)),
                              vertical_frequency=float(rng.uniform(0.1, 0.3)),
                              tilt_amplitude=float(rng.uniform(0.05, 0.3)),
                              tilt_frequency=float(rng.uniform(0.15, 0.4)), waypoints=wp)
        truth = generate_trajectory(spec)
        imu = synthesize_imu(truth, noise, seed=seed * 1000 + k + 1, imu_rate=spec.imu_rate)
        out.append(ImuSequence.from_truth(truth, imu, noise))
    return out


@dataclass
class TrainingConfig:
    seed: int = 0
    horizons: tuple = (16, 32)
    gyro_epochs: int = 80
    accel_epochs: int = 80
    quality_epochs: int = 600
    lr: float = 2e-3
    quality_lr: float = 1e-2
    quality_weight: float = 1.0
    max_retries: int = 6
    noise_scales: tuple = (1.0, 2.0, 5.0, 10.0)
    huber_variant: str = "standard"


@dataclass
class TrainedDenoiser:
    model: Denoiser
    config: DenoiserConfig
    metadata: dict = field(default_factory=dict)


class _Data:
    def __init__(self, seq: ImuSequence, horizons):
        self.seq = seq
        self.raw = seq.raw()
        self.gt = GroundTruthIncrements(seq.p, seq.v, seq.R, seq.dt, horizons, GRAVITY)


def _seed_all(seed):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def _sensor_slice(sensor):
    return slice(0, 3) if sensor == GYRO else slice(3, 6)


def _sensor_sigma(seq, sensor):
    return seq.gyro_sigma if sensor == GYRO else seq.accel_sigma


def _augment(data, sensor, cfg, gen, chunk, warmup):
    """Inflate the sensor's white noise by a random scale per chunk; returns raw, labels and a loss mask."""
    raw = data.raw.clone()
    n = len(raw)
    scales = torch.tensor(cfg.noise_scales, dtype=torch.float32)
    pick = torch.randint(len(scales), ((n + chunk - 1) // chunk,), generator=gen)
    s = scales[pick].repeat_interleave(chunk)[:n]
    extra = _sensor_sigma(data.seq, sensor) * torch.sqrt(s * s - 1.0)
    raw[:, _sensor_slice(sensor)] += extra[:, None] * torch.randn(n, 3, generator=gen)
    # windows straddling a chunk boundary mix two noise levels
    mask = (torch.arange(n) % chunk) >= warmup
    return raw, 1.0 / s, mask


def _quality_loss(model, data, sensor, cfg, gen, chunk=512):
    raw, y, mask = _augment(data, sensor, cfg, gen, chunk, model.cfg.window - 1)
    logits = model.net(sensor).quality(model.features(model.pad(raw), sensor).T).squeeze(-1)
    return torch.nn.functional.binary_cross_entropy_with_logits(logits[mask], y[mask])


def _sensor_loss(model, data, sensor, cfg, gyro_hat=None):
    out = model.forward_stream(data.raw)
    if sensor == GYRO:
        w = out[GYRO][0].double()
        return gyro_loss(w, data.gt, data.seq.dt, cfg.horizons, cfg.huber_variant)
    a = out[ACCEL][0].double()
    return accel_loss(gyro_hat, a, data.gt, data.seq.dt, cfg.horizons, cfg.huber_variant)


def _fit_corrections(model, datas, sensor, cfg, epochs, gyro_hats=None):
    """Stage 1: corrections, calibration and conv features.

    The quality objective on noise-augmented input rides along (scaled
    against the initial correction loss) so the frozen features of stage 2
    carry noise-level information. A step that fails to lower the
    correction loss is undone and retried with half the learning rate.
    """
    net = model.net(sensor)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    hats = gyro_hats or [None] * len(datas)
    gen = torch.Generator().manual_seed(cfg.seed + (3 if sensor == GYRO else 5))

    def evaluate():
        with torch.no_grad():
            return float(np.mean([_sensor_loss(model, d, sensor, cfg, h).item() for d, h in zip(datas, hats)]))

    curve = [evaluate()]
    ref = max(curve[0], 1e-300)
    for ep in range(epochs):
        base_lr = 0.5 * cfg.lr * (1 + math.cos(math.pi * ep / max(1, epochs)))
        opt.zero_grad()
        for d, h in zip(datas, hats):
            loss = _sensor_loss(model, d, sensor, cfg, h) / ref
            if cfg.quality_weight > 0:
                loss = loss + cfg.quality_weight * _quality_loss(model, d, sensor, cfg, gen)
            (loss / len(datas)).backward()
        saved = (copy.deepcopy(net.state_dict()), copy.deepcopy(opt.state_dict()))
        lr = base_lr
        for _ in range(cfg.max_retries):
            for g in opt.param_groups:
                g["lr"] = lr
            opt.step()
            value = evaluate()
            if value < curve[-1]:
                break
            net.load_state_dict(saved[0])
            opt.load_state_dict(saved[1])
            lr *= 0.5
        else:
            log.info("%s training stalled at epoch %d", sensor, ep)
            break
        curve.append(value)
        log.debug("%s epoch %d loss %.6e", sensor, ep, value)
    return curve


def _fit_quality(model, datas, sensor, cfg):
    """Stage 2: conv layers frozen, only the linear quality layers are trained."""
    gen = torch.Generator().manual_seed(cfg.seed + (11 if sensor == GYRO else 13))
    head = model.net(sensor).quality
    opt = torch.optim.Adam(head.parameters(), lr=cfg.quality_lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, cfg.quality_epochs))
    feats, labels = [], []
    with torch.no_grad():
        for d in datas:
            for _ in range(2):
                raw, y, mask = _augment(d, sensor, cfg, gen, 512, model.cfg.window - 1)
                f = model.features(model.pad(raw), sensor)
                feats.append(f.T[mask])
                labels.append(y[mask])
    X = torch.cat(feats)
    y = torch.cat(labels)
    curve = []
    for _ in range(cfg.quality_epochs):
        opt.zero_grad()
        loss = torch.nn.functional.binary_cross_entropy_with_logits(head(X).squeeze(-1), y)
        loss.backward()
        opt.step()
        sched.step()
        curve.append(loss.item())
    return curve


def train_gyro(model: Denoiser, seqs, cfg: TrainingConfig):
    _seed_all(cfg.seed)
    datas = [_Data(s, cfg.horizons) for s in seqs]
    curve = _fit_corrections(model, datas, GYRO, cfg, cfg.gyro_epochs)
    q_curve = _fit_quality(model, datas, GYRO, cfg)
    model.trained = model.trained | {GYRO}
    return {"gyro_loss": curve, "gyro_quality_loss": q_curve}


def corrected_gyro(model: Denoiser, seq: ImuSequence):
    with torch.no_grad():
        return model.forward_stream(seq.raw())[GYRO][0].double()


def train_accel(model: Denoiser, seqs, cfg: TrainingConfig, gyro_model: Denoiser | None = None):
    """Accelerometer stage; rotations come from the already trained gyro network."""
    gyro_model = gyro_model or model
    if GYRO not in gyro_model.trained:
        raise TrainingOrderError("the gyro network must be trained before the accelerometer network")
    _seed_all(cfg.seed + 1)
    datas = [_Data(s, cfg.horizons) for s in seqs]
    hats = [corrected_gyro(gyro_model, s) for s in seqs]
    curve = _fit_corrections(model, datas, ACCEL, cfg, cfg.accel_epochs, hats)
    q_curve = _fit_quality(model, datas, ACCEL, cfg)
    model.trained = model.trained | {ACCEL}
    return {"accel_loss": curve, "accel_quality_loss": q_curve}


def train_denoiser(seqs, cfg: TrainingConfig | None = None, model_cfg: DenoiserConfig | None = None) -> TrainedDenoiser:
    cfg = cfg or TrainingConfig()
    _seed_all(cfg.seed)
    model = Denoiser(model_cfg)
    model.set_normalization(np.vstack([np.hstack([s.gyro, s.accel]) for s in seqs]))
    meta = {"seed": cfg.seed, "horizons": list(cfg.horizons)}
    meta.update(train_gyro(model, seqs, cfg))
    meta.update(train_accel(model, seqs, cfg))
    model.eval()
    return TrainedDenoiser(model, model.cfg, meta)


def open_loop_drift(seq: ImuSequence, gyro, accel, horizon_s=1.0, stride=50, gravity=GRAVITY):
    """Mean position error after integrating ``horizon_s`` of IMU from true initial states."""
    n = int(round(horizon_s / seq.dt))
    starts = np.arange(0, len(seq) - n, stride)
    R = seq.R[starts].copy()
    p = seq.p[starts].copy()
    v = seq.v[starts].copy()
    dt = seq.dt
    for k in range(n):
        idx = starts + k
        acc = np.einsum("nij,nj->ni", R, accel[idx]) + gravity
        p = p + v * dt + 0.5 * acc * dt * dt
        v = v + acc * dt
        R = R @ so3_exp(torch.as_tensor(gyro[idx] * dt, dtype=torch.float64)).numpy()
    return float(np.mean(np.linalg.norm(p - seq.p[starts + n], axis=1)))
