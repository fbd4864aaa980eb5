"""Twin dilated temporal-convolution networks that correct raw IMU samples.

Each sensor network sees the last ``window`` raw samples (gyro and accel)
as twelve standardized channels, the samples and their first differences,
and emits an additive correction plus a quality score in
[0, 1] for its own sensor. Corrected sample = ``C @ raw + correction`` where
``C = S @ M`` is a learned calibration (diagonal scale, full misalignment).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

GYRO, ACCEL = "gyro", "accel"


class InvalidWindowError(ValueError):
    pass


@dataclass
class DenoiserConfig:
    window: int = 129
    channels: int = 32
    kernel: int = 2
    dilations: tuple = (1, 2, 4, 8, 16, 32, 64)
    quality_hidden: int = 32

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        # one extra sample feeds the first difference channel
        if self.receptive_field + 1 > self.window:
            raise ValueError(f"receptive field {self.receptive_field} needs a window of at least "
                             f"{self.receptive_field + 1}, got {self.window}")

    @property
    def layers(self):
        return len(self.dilations)

    @property
    def receptive_field(self):
        return 1 + (self.kernel - 1) * sum(self.dilations)

    def to_dict(self):
        return {"window": self.window, "channels": self.channels, "kernel": self.kernel,
                "dilations": list(self.dilations), "quality_hidden": self.quality_hidden}


@dataclass
class DenoiserOutput:
    gyro_correction: np.ndarray
    accel_correction: np.ndarray
    zeta_gyro: np.ndarray
    zeta_accel: np.ndarray

    @property
    def zeta(self):
        return self.zeta_gyro + self.zeta_accel


class CalibrationModel(nn.Module):
    """``C = S @ M`` with ``S`` diagonal and ``M`` a full 3x3, both starting at identity."""

    def __init__(self):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(3))
        self.misalignment = nn.Parameter(torch.eye(3))

    def S(self):
        return torch.diag(self.scale)

    def matrix(self):
        return self.S() @ self.misalignment


class SensorNet(nn.Module):
    """Causal dilated conv stack with a correction head and a quality head."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        convs = []
        c_in = 12
        for d in cfg.dilations:
            conv = nn.Conv1d(c_in, cfg.channels, cfg.kernel, dilation=d)
            # variance-preserving init keeps deep features informative
            nn.init.kaiming_normal_(conv.weight, nonlinearity="relu")
            nn.init.zeros_(conv.bias)
            convs.append(conv)
            c_in = cfg.channels
        self.convs = nn.ModuleList(convs)
        self.act = nn.GELU()
        self.head = nn.Conv1d(cfg.channels, 3, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.quality = nn.Sequential(nn.Linear(cfg.channels, cfg.quality_hidden), nn.GELU(),
                                     nn.Linear(cfg.quality_hidden, 1))
        self.calibration = CalibrationModel()

    def features(self, x):
        """``x`` (B, 12, T) normalized -> (B, C, T - receptive_field + 1)."""
        for conv in self.convs:
            x = self.act(conv(x))
        return x


class Denoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig | None = None):
        super().__init__()
        self.cfg = cfg or DenoiserConfig()
        self.gyro = SensorNet(self.cfg)
        self.accel = SensorNet(self.cfg)
        self.register_buffer("input_mean", torch.zeros(12))
        self.register_buffer("input_std", torch.ones(12))
        self.trained: set = set()

    def net(self, sensor):
        return self.gyro if sensor == GYRO else self.accel

    def set_normalization(self, raw):
        raw = torch.as_tensor(np.asarray(raw), dtype=torch.float32)
        x = torch.cat([raw[1:], raw[1:] - raw[:-1]], 1)
        self.input_mean.copy_(x.mean(0))
        self.input_std.copy_(x.std(0).clamp_min(1e-6))

    def pad(self, raw):
        """Prepend ``window - 1`` copies of the first sample so every output has a full window."""
        first = raw[:1].expand(self.cfg.window - 1, -1)
        return torch.cat([first, raw], 0)

    def features(self, x, sensor):
        """Final conv features of a (padded) raw block ``x`` (T, 6) -> (C, T - window + 1)."""
        z = torch.cat([x[1:], x[1:] - x[:-1]], 1)
        z = ((z - self.input_mean) / self.input_std).T.unsqueeze(0)
        drop = self.cfg.window - 1 - self.cfg.receptive_field
        return self.net(sensor).features(z)[0, :, drop:]

    def _run(self, raw, padded):
        """``raw`` (T, 6) tensor -> per-step corrected gyro/accel and scores, length T (or T - N + 1 if not padded)."""
        x = self.pad(raw) if padded else raw
        tail = x[self.cfg.window - 1:]
        out = {}
        for sensor, sl in ((GYRO, slice(0, 3)), (ACCEL, slice(3, 6))):
            net = self.net(sensor)
            f = self.features(x, sensor)
            corr = net.head(f.unsqueeze(0))[0].T
            score = torch.sigmoid(net.quality(f.T)).squeeze(-1)
            out[sensor] = (tail[:, sl] @ net.calibration.matrix().T + corr, score)
        return out

    def forward_stream(self, raw, padded=True):
        return self._run(raw, padded)

    # -- numpy inference -------------------------------------------------
    @torch.no_grad()
    def correct(self, gyro_window, accel_window):
        """Correct the last sample of an ``(N, 3)`` window pair; returns ``(w_hat, a_hat, DenoiserOutput)``."""
        g = np.asarray(gyro_window, dtype=np.float32)
        a = np.asarray(accel_window, dtype=np.float32)
        n = self.cfg.window
        if g.shape != (n, 3) or a.shape != (n, 3):
            raise InvalidWindowError(f"expected windows of shape ({n}, 3), got {g.shape} and {a.shape}")
        raw = torch.from_numpy(np.hstack([g, a]))
        out = self._run(raw, padded=False)
        return self._package(raw[-1:], out, slice(-1, None), single=True)

    @torch.no_grad()
    def correct_stream(self, gyro, accel):
        """Correct every sample of a stream, padding the start by repeating the first sample."""
        raw = torch.from_numpy(np.hstack([np.asarray(gyro, np.float32), np.asarray(accel, np.float32)]))
        out = self._run(raw, padded=True)
        return self._package(raw, out, slice(None), single=False)

    def _package(self, raw, out, sl, single):
        (wg, zg), (wa, za) = out[GYRO], out[ACCEL]
        wg, wa = wg[sl].double().numpy(), wa[sl].double().numpy()
        zg, za = zg[sl].double().numpy(), za[sl].double().numpy()
        cg = self.gyro.calibration.matrix().double().numpy()
        ca = self.accel.calibration.matrix().double().numpy()
        r = raw.double().numpy()
        res = DenoiserOutput(wg - r[:, :3] @ cg.T, wa - r[:, 3:] @ ca.T, zg, za)
        if single:
            res = DenoiserOutput(res.gyro_correction[0], res.accel_correction[0], float(zg[0]), float(za[0]))
            return wg[0], wa[0], res
        return wg, wa, res


def imu_attention_weight(zeta, confident=False):
    """Mean quality score over an inter-frame IMU set; forced to 1 when ``confident``."""
    z = np.asarray(zeta, dtype=float).ravel()
    if z.size == 0:
        raise ValueError("attention weight needs at least one IMU sample")
    if confident:
        return 1.0
    return float(np.mean(z))
