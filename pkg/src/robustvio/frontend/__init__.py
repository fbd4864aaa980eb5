"""Dynamic-keypoint filtering and frame weighting."""

from .epipolar import (
    DegenerateInputError,
    eight_point,
    estimate_fundamental_ransac,
    fundamental_from_poses,
)
from .filter import (
    FILTERED_DYNAMIC,
    KEPT,
    RANSAC_OUTLIER,
    FrontendOutput,
    FrontendParams,
    dilate_mask,
    epipolar_readmission,
    frame_correspondences,
    semantic_partition,
    single_ransac_filter,
    three_step_filter,
    write_frontend_debug,
)

__all__ = [
    "DegenerateInputError", "FILTERED_DYNAMIC", "FrontendOutput", "FrontendParams", "KEPT", "RANSAC_OUTLIER",
    "dilate_mask", "eight_point", "epipolar_readmission", "estimate_fundamental_ransac", "frame_correspondences",
    "fundamental_from_poses", "semantic_partition", "single_ransac_filter", "three_step_filter",
    "write_frontend_debug",
]
