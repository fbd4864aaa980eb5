"""Six-configuration ablation over one dataset."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

from ..simulator import read_dataset
from .metrics import EvaluationError, Trajectory, ate_rms, rpe_rms
from .pipeline import NAMED_CONFIGS, PipelineConfig, run_pipeline, write_outputs

log = logging.getLogger(__name__)

ABLATION_HEADER = ["config", "use_visual", "use_inertial", "semantic_filter", "adaptive_weights", "denoiser",
                   "loop_closure", "status", "loops", "ate_rms_m", "ate_per_path", "rpe_trans_m", "rpe_rot_deg"]


def groundtruth_trajectory(ds) -> Trajectory:
    gt = ds.groundtruth
    return Trajectory(gt.t_ns, gt.p, gt.q)


def fit_denoiser(ds, seed=0, epochs=None):
    """Denoiser trained on separate sequences recorded by the dataset's IMU model."""
    from ..denoise import TrainingConfig, synthetic_sequences, train_denoiser

    cfg = TrainingConfig(seed=seed)
    if epochs is not None:
        cfg.gyro_epochs = cfg.accel_epochs = int(epochs)
    return train_denoiser(synthetic_sequences(seed, 3, noise=ds.noise), cfg)


def ablate(dataset, out_dir=None, denoiser=None, configs=tuple(NAMED_CONFIGS), seed=0, rpe_delta=1.0):
    """Run each named config; returns rows keyed by ``ABLATION_HEADER`` and writes ``ablation.csv``."""
    ds = dataset if hasattr(dataset, "imu") else read_dataset(dataset)
    gt = groundtruth_trajectory(ds)
    rows = []
    for name in configs:
        cfg = PipelineConfig.named(name, seed=seed)
        if cfg.denoiser and denoiser is None:
            log.info("training a denoiser for %s", name)
            denoiser = fit_denoiser(ds, seed=seed).model
        res = run_pipeline(ds, cfg, denoiser if cfg.denoiser else None)
        if out_dir is not None:
            write_outputs(res, Path(out_dir) / name.replace("+", "_"), cfg)
        status = res.status
        try:
            est = res.trajectory()
            ate, ate_n = ate_rms(est, gt), ate_rms(est, gt, normalize=True)
            rpe_t, rpe_r = rpe_rms(est, gt, delta_s=rpe_delta)
        except EvaluationError as exc:
            log.warning("%s: metrics unavailable (%s)", name, exc)
            ate = ate_n = rpe_t = rpe_r = float("nan")
            status = "unevaluable" if status == "ok" else status
        row = {"config": name, **{k: int(getattr(cfg, k)) for k in ABLATION_HEADER[1:7]}, "status": status,
               "loops": res.loops, "ate_rms_m": ate, "ate_per_path": ate_n, "rpe_trans_m": rpe_t, "rpe_rot_deg": rpe_r}
        log.info("%s: ATE %.3f m (%s)", name, row["ate_rms_m"], res.status)
        rows.append(row)
    if out_dir is not None:
        write_ablation(Path(out_dir) / "ablation.csv", rows)
    return rows


def write_ablation(path, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ABLATION_HEADER)
        for r in rows:
            w.writerow([repr(float(r[k])) if isinstance(r[k], float) else r[k] for k in ABLATION_HEADER])
