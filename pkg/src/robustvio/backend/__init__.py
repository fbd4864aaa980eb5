"""Windowed nonlinear least-squares backend."""

from .visual import DegenerateFeatureError, back_project, tangent_basis, triangulate, visual_residual, visual_residuals
from .window import (
    ConstantVelocityBlock,
    CostBreakdown,
    Feature,
    FrameState,
    ImuBlock,
    Prior,
    SlidingWindow,
    SolveReport,
    SolverParams,
    cv_jacobians,
    cv_residual,
    write_estimate,
)

__all__ = [
    "ConstantVelocityBlock", "CostBreakdown", "DegenerateFeatureError", "Feature", "FrameState", "ImuBlock", "Prior",
    "SlidingWindow", "SolveReport", "SolverParams", "back_project", "cv_jacobians", "cv_residual", "tangent_basis",
    "triangulate", "visual_residual", "visual_residuals", "write_estimate",
]
