"""Command-line entry point: simulate, train-denoiser, run, evaluate, ablate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

log = logging.getLogger("robustvio")

PRESETS = ("ablation", "clean")


def _horizons(text):
    try:
        hs = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad horizon list {text!r}") from None
    if not hs or min(hs) < 1:
        raise argparse.ArgumentTypeError("horizons must be positive integers")
    return hs


def _scenario(args):
    from .simulator import ScenarioSpec, ablation_scenario, clean_scenario

    if args.spec:
        spec = ScenarioSpec.from_file(args.spec)
        if args.seed is not None:
            spec.trajectory.seed = args.seed
        return spec
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.duration is not None:
        kw["duration"] = args.duration
    return (ablation_scenario if args.preset == "ablation" else clean_scenario)(**kw)


def cmd_simulate(args):
    from .flatconfig import write_flat
    from .simulator import simulate, write_dataset

    spec = _scenario(args)
    res = simulate(spec)
    write_dataset(res.dataset, args.out)
    write_flat(Path(args.out) / "scenario_spec.txt", spec.to_flat())
    n = len(res.dataset.frame_times())
    print(f"wrote {args.out}: {len(res.dataset.imu)} IMU samples, {n} frames, {len(res.dataset.tracks)} track rows")
    return 0


def cmd_train_denoiser(args):
    from .denoise import ImuSequence, TrainingConfig, save_denoiser, synthetic_sequences, train_denoiser
    from .simulator import read_dataset

    cfg = TrainingConfig(seed=args.seed, horizons=args.horizon)
    if args.epochs is not None:
        cfg.gyro_epochs = cfg.accel_epochs = args.epochs
    if args.dataset:
        seqs = [ImuSequence.from_dataset(read_dataset(d)) for d in args.dataset]
    else:
        seqs = synthetic_sequences(args.seed, args.sequences)
    td = train_denoiser(seqs, cfg)
    save_denoiser(td, args.out)
    m = td.metadata
    print(f"gyro loss {m['gyro_loss'][0]:.6g} -> {m['gyro_loss'][-1]:.6g}; "
          f"accel loss {m['accel_loss'][0]:.6g} -> {m['accel_loss'][-1]:.6g}")
    print(f"wrote {args.out}")
    return 0


def _pipeline_config(args):
    from .evaluation import PipelineConfig

    over = {"seed": args.seed}
    if args.config:
        cfg = PipelineConfig.from_file(args.config, **over)
        if args.preset:
            log.warning("--preset ignored because --config was given")
        return cfg
    return PipelineConfig.named(args.preset or "VIO", **{k: v for k, v in over.items() if v is not None})


def cmd_run(args):
    from .evaluation import run_pipeline

    cfg = _pipeline_config(args)
    model = None
    if cfg.denoiser:
        if not args.model:
            print("error: config enables the denoiser; pass --model <dir>", file=sys.stderr)
            return 2
        from .denoise import load_denoiser

        model = load_denoiser(args.model).model
    res = run_pipeline(args.dataset, cfg, model, out_dir=args.out)
    print(f"{cfg.name}: {len(res.estimate)} poses, status {res.status}, loops {res.loops}")
    return 0 if res.status == "ok" else 3


def cmd_evaluate(args):
    from .evaluation import ate_rms, read_trajectory, rpe_rms

    est = read_trajectory(args.est)
    gt = read_trajectory(args.gt)
    ate = ate_rms(est, gt, align=args.align, normalize=args.normalize_path_length)
    rpe_t, rpe_r = rpe_rms(est, gt, delta_s=args.rpe_delta)
    rows = [("ate_rms", ate), ("rpe_trans_m", rpe_t), ("rpe_rot_deg", rpe_r)]
    for k, v in rows:
        print(f"{k}: {v:.6f}")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["metric", "value", "align", "rpe_delta_s", "normalized"])
            for k, v in rows:
                w.writerow([k, repr(float(v)), args.align, repr(float(args.rpe_delta)), int(args.normalize_path_length)])
    return 0


def cmd_ablate(args):
    from .evaluation import ablate

    model = None
    if args.model:
        from .denoise import load_denoiser

        model = load_denoiser(args.model).model
    rows = ablate(args.dataset, args.out, denoiser=model, seed=args.seed)
    width = max(len(r["config"]) for r in rows)
    for r in rows:
        print(f"{r['config']:<{width}}  ATE {r['ate_rms_m']:9.4f} m  RPE {r['rpe_trans_m']:.4f} m  {r['status']}")
    summary = {r["config"]: r["ate_rms_m"] for r in rows}
    (Path(args.out) / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="robustvio", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a dataset directory")
    s.add_argument("--spec", help="flat key = value scenario file")
    s.add_argument("--preset", choices=PRESETS, default="ablation", help="built-in scenario when --spec is absent")
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train-denoiser", help="fit the IMU denoiser")
    s.add_argument("--dataset", nargs="*", default=[], help="dataset dirs with ground truth (default: synthetic)")
    s.add_argument("--sequences", type=int, default=3, help="synthetic sequences when no dataset is given")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int)
    s.add_argument("--horizon", type=_horizons, default=(16, 32), help="comma-separated, e.g. 16,32")
    s.set_defaults(func=cmd_train_denoiser)

    s = sub.add_parser("run", help="estimate a trajectory")
    s.add_argument("--dataset", required=True)
    s.add_argument("--config", help="flat key = value pipeline config")
    s.add_argument("--preset", help="named config: VIO, VO+SS, IO, VIO+SS, VIO+SS+W, SRVIO")
    s.add_argument("--model", help="denoiser directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("evaluate", help="ATE / RPE of an estimate against ground truth")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--align", choices=("se3", "sim3", "none"), default="se3")
    s.add_argument("--rpe-delta", type=float, default=1.0)
    s.add_argument("--normalize-path-length", action="store_true")
    s.add_argument("--out", help="optional metrics CSV")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="run the six named configs and write ablation.csv")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--model", help="denoiser directory (trained internally when absent)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    from .evaluation import EvaluationError, PipelineError
    from .simulator import ConfigurationError, DatasetError

    try:
        return args.func(args)
    except (EvaluationError, PipelineError, ConfigurationError, DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
