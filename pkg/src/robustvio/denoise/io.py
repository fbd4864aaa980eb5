"""Model directory: ``manifest.json`` + ``weights.bin`` (float32, little-endian) + ``calibration.csv``."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import torch

from .model import ACCEL, GYRO, Denoiser, DenoiserConfig
from .training import TrainedDenoiser

FORMAT_VERSION = 1


class ModelFormatError(IOError):
    pass


def save_denoiser(td: TrainedDenoiser, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tensors, blobs, offset = [], [], 0
    for name, t in td.model.state_dict().items():
        arr = t.detach().cpu().numpy().astype("<f4")
        blobs.append(arr.tobytes())
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset,
                        "nbytes": len(blobs[-1])})
        offset += len(blobs[-1])
    (d / "weights.bin").write_bytes(b"".join(blobs))
    manifest = {"format": FORMAT_VERSION, "byte_order": "little", "config": td.config.to_dict(),
                "tensors": tensors, "metadata": td.metadata}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    with open(d / "calibration.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sensor", "matrix", "m00", "m01", "m02", "m10", "m11", "m12", "m20", "m21", "m22"])
        for sensor in (GYRO, ACCEL):
            cal = td.model.net(sensor).calibration
            for label, M in (("S", cal.S()), ("M", cal.misalignment)):
                w.writerow([sensor, label, *[repr(float(x)) for x in M.detach().numpy().ravel()]])


def load_denoiser(directory) -> TrainedDenoiser:
    d = Path(directory)
    for name in ("manifest.json", "weights.bin"):
        if not (d / name).exists():
            raise ModelFormatError(f"{name} missing in {d}")
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format {manifest.get('format')!r}")
    cfg = DenoiserConfig(**manifest["config"])
    model = Denoiser(cfg)
    blob = (d / "weights.bin").read_bytes()
    state = {}
    for t in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype="<f4", count=t["nbytes"] // 4, offset=t["offset"]).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.copy())
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise ModelFormatError(str(exc)) from exc
    model.trained = {GYRO, ACCEL}
    model.eval()
    return TrainedDenoiser(model, cfg, manifest.get("metadata", {}))
