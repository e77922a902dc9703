"""Global point-cloud registration from reliability-sorted correspondence triplets.

The pipeline detects curvature keypoints, describes them with fast point
feature histograms, forms one-to-one descriptor correspondences, scores their
rigid-motion consistency, grows geometrically consistent correspondence
triplets, turns each triplet into a pose vote via a closed-form rigid fit,
and reads the final pose off decorrelated vote histograms.
"""

from __future__ import annotations

from .correspond import Correspondence, CorrespondenceSet, build_correspondences, score_reliability
from .errors import (
    DegenerateInputError,
    EmptySetError,
    FileFormatError,
    InvalidInputError,
    RegistrationError,
)
from .evaluation import (
    RingDataset,
    generate_ring_views,
    hidden_point_removal,
    load_ring_dataset,
    rmse,
    rotation_error_degrees,
    save_ring_dataset,
)
from .features import (
    Keypoint,
    PpfDescriptor,
    compute_curvatures,
    compute_fpfh,
    compute_ppf,
    detect_keypoints,
)
from .geometry import (
    PointCloud,
    RigidTransform,
    RotationVector,
    SpatialIndex,
    apply_transform,
    cloud_resolution,
    estimate_normals,
    rotation_matrices_to_vectors,
    rotation_to_vector,
    rotation_vectors_to_matrices,
    vector_to_rotation,
)
from .pipeline import (
    RegistrationConfig,
    RegistrationDiagnostics,
    RegistrationResult,
    register,
)
from .ply_io import read_ply, read_transform, write_ply, write_transform
from .report import BenchRow, format_report, format_timings, write_report
from .triplets import Triplet, TripletSearchConfig, generate_triplets, ppf_similar, triangle_ok
from .voting import (
    AxisMode,
    DecorrelatedFrame,
    PoseStats,
    VoteHistogram,
    VoteSet,
    build_vote_histogram,
    collect_votes,
    decorrelate,
    dump_votes,
    estimate_pose,
    estimate_pose_with_stats,
    estimate_triplet_transform,
    histogram_mode,
)

__all__ = [
    "AxisMode",
    "BenchRow",
    "Correspondence",
    "CorrespondenceSet",
    "DecorrelatedFrame",
    "DegenerateInputError",
    "EmptySetError",
    "FileFormatError",
    "InvalidInputError",
    "Keypoint",
    "PointCloud",
    "PoseStats",
    "PpfDescriptor",
    "RegistrationConfig",
    "RegistrationDiagnostics",
    "RegistrationError",
    "RegistrationResult",
    "RigidTransform",
    "RingDataset",
    "RotationVector",
    "SpatialIndex",
    "Triplet",
    "TripletSearchConfig",
    "VoteHistogram",
    "VoteSet",
    "apply_transform",
    "build_correspondences",
    "build_vote_histogram",
    "cloud_resolution",
    "collect_votes",
    "compute_curvatures",
    "compute_fpfh",
    "compute_ppf",
    "decorrelate",
    "detect_keypoints",
    "dump_votes",
    "estimate_normals",
    "estimate_pose",
    "estimate_pose_with_stats",
    "estimate_triplet_transform",
    "format_report",
    "format_timings",
    "generate_ring_views",
    "generate_triplets",
    "hidden_point_removal",
    "histogram_mode",
    "load_ring_dataset",
    "ppf_similar",
    "read_ply",
    "read_transform",
    "register",
    "rmse",
    "rotation_error_degrees",
    "rotation_matrices_to_vectors",
    "rotation_to_vector",
    "rotation_vectors_to_matrices",
    "save_ring_dataset",
    "score_reliability",
    "triangle_ok",
    "vector_to_rotation",
    "write_ply",
    "write_report",
    "write_transform",
]

__version__ = "0.1.0"
