"""Trajectory metrics, the pipeline runner and ablation orchestration."""

from .ablation import ABLATION_HEADER, ablate, fit_denoiser, groundtruth_trajectory, write_ablation
from .metrics import (
    ALIGN_MODES,
    AlignmentResult,
    Association,
    EvaluationError,
    Trajectory,
    associate,
    ate_rms,
    read_trajectory,
    rpe_rms,
    umeyama_align,
    windowed_ate,
)
from .pipeline import (
    DIVERGED,
    NAMED_CONFIGS,
    FrameReport,
    Pipeline,
    PipelineConfig,
    PipelineError,
    PipelineResult,
    run_pipeline,
    write_outputs,
    write_report,
)

__all__ = [
    "ABLATION_HEADER", "ablate", "fit_denoiser", "groundtruth_trajectory", "write_ablation", "ALIGN_MODES", "AlignmentResult", "Association", "DIVERGED", "EvaluationError", "FrameReport", "NAMED_CONFIGS",
    "Pipeline", "PipelineConfig", "PipelineError", "PipelineResult", "Trajectory", "associate", "ate_rms",
    "read_trajectory", "rpe_rms", "run_pipeline", "umeyama_align", "windowed_ate", "write_outputs", "write_report",
]
