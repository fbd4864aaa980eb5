"""Keyframe database, relocalization and 4-DOF pose-graph optimization."""

from .database import Candidate, DatabaseError, KeyframeDatabase, KeyframeRecord, normalize_descriptors
from .matching import Matcher, MutualNNMatcher, match_keyframes
from .pnp import PnPFailure, PnPResult, p3p, refine_pose, solve_pnp_ransac
from .revisit import RevisitTrial, revisit_hit_rate, revisit_trial
from .posegraph import (
    LOOP,
    SEQUENTIAL,
    GraphError,
    PoseGraphEdge,
    PoseGraphNode,
    edge_jacobians,
    edge_residual,
    graph_rms,
    optimize_pose_graph,
    relative_edge,
    write_posegraph,
)

__all__ = [
    "Candidate", "DatabaseError", "GraphError", "KeyframeDatabase", "KeyframeRecord", "LOOP", "Matcher",
    "MutualNNMatcher", "PnPFailure", "PnPResult", "PoseGraphEdge", "PoseGraphNode", "SEQUENTIAL", "edge_jacobians",
    "edge_residual", "graph_rms", "match_keyframes", "normalize_descriptors", "optimize_pose_graph", "p3p",
    "refine_pose", "relative_edge", "RevisitTrial", "revisit_hit_rate", "revisit_trial", "solve_pnp_ransac", "write_posegraph",
]
