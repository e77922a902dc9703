"""End-to-end registration pipeline and its configuration."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .correspond import CorrespondenceSet, build_correspondences, score_reliability
from .errors import InvalidInputError, RegistrationError
from .features import compute_curvatures, compute_fpfh, detect_keypoints
from .geometry import PointCloud, RigidTransform, cloud_resolution, estimate_normals
from .triplets import TripletSearchConfig, generate_triplets
from .voting import PoseStats, VoteSet, collect_votes, estimate_pose_with_stats

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegistrationConfig:
    """Tunable parameters of the registration pipeline.

    Angle-valued fields are in degrees.  `fpfh_radius_factor` and
    `reliability_range` are multiples of the cloud-pair resolution;
    `ppf_thresholds` is (distance ratio, angle tolerance, normal-angle
    tolerance).
    """

    keypoint_count: int = 1500
    fpfh_radius_factor: float = 10.0
    knn_k: int = 15
    curvature_threshold: float = 0.05
    reliability_range: float = 10.0
    divisions: int = 4
    ppf_thresholds: tuple[float, float, float] = (0.95, 3.0, 5.0)
    triangle_threshold: float = 20.0
    min_triplets: int = 150_000
    scan_fraction: float = 0.6
    mode_delta: int = 1
    normal_k: int = 20

    def __post_init__(self) -> None:
        if self.keypoint_count < 1:
            raise InvalidInputError(f"keypoint_count must be >= 1, got {self.keypoint_count}")
        if self.fpfh_radius_factor <= 0:
            raise InvalidInputError("fpfh_radius_factor must be positive")
        if self.knn_k < 1:
            raise InvalidInputError(f"knn_k must be >= 1, got {self.knn_k}")
        if self.curvature_threshold <= 0:
            raise InvalidInputError("curvature_threshold must be positive")
        if self.reliability_range <= 0:
            raise InvalidInputError("reliability_range must be positive")
        if self.divisions < 1:
            raise InvalidInputError(f"divisions must be >= 1, got {self.divisions}")
        if self.mode_delta < 0:
            raise InvalidInputError(f"mode_delta must be >= 0, got {self.mode_delta}")
        if self.normal_k < 3:
            raise InvalidInputError(f"normal_k must be >= 3, got {self.normal_k}")
        # Delegate range checks on the remaining fields.
        self.triplet_config()

    def triplet_config(self) -> TripletSearchConfig:
        """The triplet-search view of this config (angles converted to radians)."""
        ratio, angle_deg, normal_deg = self.ppf_thresholds
        return TripletSearchConfig(
            ppf_thresholds=(ratio, math.radians(angle_deg), math.radians(normal_deg)),
            triangle_threshold=math.radians(self.triangle_threshold),
            min_triplets=self.min_triplets,
            scan_fraction=self.scan_fraction,
        )

    _INT_FIELDS = ("keypoint_count", "knn_k", "divisions", "min_triplets", "mode_delta", "normal_k")
    _FLOAT_FIELDS = (
        "fpfh_radius_factor",
        "curvature_threshold",
        "reliability_range",
        "triangle_threshold",
        "scan_fraction",
    )

    def updated(self, overrides: Mapping[str, str]) -> "RegistrationConfig":
        """A copy with string-valued overrides parsed and applied.

        Unknown keys are rejected rather than ignored so that configuration
        typos surface immediately.
        """
        values = {}
        for key, raw in overrides.items():
            raw = raw.strip()
            try:
                if key in self._INT_FIELDS:
                    values[key] = int(raw)
                elif key in self._FLOAT_FIELDS:
                    values[key] = float(raw)
                elif key == "ppf_thresholds":
                    parts = [p for p in raw.replace(",", " ").split() if p]
                    if len(parts) != 3:
                        raise ValueError("expected 3 numbers")
                    values[key] = (float(parts[0]), float(parts[1]), float(parts[2]))
                else:
                    raise InvalidInputError(f"unknown configuration key {key!r}")
            except ValueError as exc:
                raise InvalidInputError(f"bad value for {key!r}: {raw!r} ({exc})") from None
        return dataclasses.replace(self, **values)

    @classmethod
    def from_file(cls, path) -> "RegistrationConfig":
        """Parse a flat ``key = value`` text file ('#' starts a comment)."""
        overrides: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            overrides[key.strip()] = value.strip()
        return cls().updated(overrides)


@dataclass(frozen=True)
class RegistrationDiagnostics:
    """Counters and timings describing one registration run."""

    resolution: float
    correspondence_count: int
    triplet_count: int
    vote_count: int
    degenerate_triplet_count: int
    consensus_ratio: float
    stage_seconds: dict[str, float]


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    """Estimated transform (moving cloud onto fixed cloud) plus diagnostics.

    `votes` is populated only when the caller asked to keep the raw pose
    votes (rotation-vector set, translation set); it is None otherwise.
    """

    transform: RigidTransform
    diagnostics: RegistrationDiagnostics
    votes: tuple[VoteSet, VoteSet] | None = None


def _relabel(exc: RegistrationError, stage: str) -> RegistrationError:
    labeled = type(exc)(f"{stage}: {exc}")
    labeled.__cause__ = exc
    return labeled


def register(
    fixed: PointCloud,
    moving: PointCloud,
    config: RegistrationConfig | None = None,
    keep_votes: bool = False,
) -> RegistrationResult:
    """Estimate the rigid transform that maps `moving` onto `fixed`.

    Stages: normals, resolution, curvature, keypoints, descriptors,
    correspondences, reliability, triplets, votes, pose.  Stage failures
    propagate with the stage name prefixed to the message.  Runs are
    deterministic: identical inputs give an identical transform and counts
    (timings naturally vary).
    """
    config = config or RegistrationConfig()
    if len(fixed) < config.keypoint_count or len(moving) < config.keypoint_count:
        raise InvalidInputError(
            f"keypoint_count={config.keypoint_count} exceeds a cloud size "
            f"({len(fixed)} fixed, {len(moving)} moving points)"
        )
    timings: dict[str, float] = {}

    def stage(name: str, fn):
        start = time.perf_counter()
        try:
            result = fn()
        except RegistrationError as exc:
            raise _relabel(exc, name) from exc
        elapsed = time.perf_counter() - start
        timings[name] = timings.get(name, 0.0) + elapsed
        log.debug("stage %s finished in %.3fs", name, elapsed)
        return result

    fixed_n = stage("normals", lambda: estimate_normals(fixed, config.normal_k))
    moving_n = stage("normals", lambda: estimate_normals(moving, config.normal_k))
    resolution = stage("resolution", lambda: cloud_resolution(fixed_n, moving_n))
    fixed_c = stage("curvature", lambda: compute_curvatures(fixed_n))
    moving_c = stage("curvature", lambda: compute_curvatures(moving_n))
    fixed_kp = stage("keypoints", lambda: detect_keypoints(fixed_c, config.keypoint_count))
    moving_kp = stage("keypoints", lambda: detect_keypoints(moving_c, config.keypoint_count))
    radius = config.fpfh_radius_factor * resolution
    fixed_kp = stage("descriptors", lambda: compute_fpfh(fixed_c, fixed_kp, radius))
    moving_kp = stage("descriptors", lambda: compute_fpfh(moving_c, moving_kp, radius))
    matches: CorrespondenceSet = stage(
        "correspondences",
        lambda: build_correspondences(
            fixed_kp, moving_kp, config.knn_k, config.curvature_threshold, resolution
        ),
    )
    matches = stage(
        "reliability",
        lambda: score_reliability(matches, config.reliability_range, config.divisions),
    )
    triplets = stage("triplets", lambda: generate_triplets(matches, config.triplet_config()))
    votes: tuple[VoteSet, VoteSet] = stage("votes", lambda: collect_votes(triplets))
    pose_and_stats: tuple[RigidTransform, PoseStats] = stage(
        "pose",
        lambda: estimate_pose_with_stats(votes[0], votes[1], delta=config.mode_delta),
    )
    transform, pose_stats = pose_and_stats
    diagnostics = RegistrationDiagnostics(
        resolution=resolution,
        correspondence_count=len(matches),
        triplet_count=len(triplets),
        vote_count=len(votes[0]),
        degenerate_triplet_count=len(triplets) - len(votes[0]),
        consensus_ratio=pose_stats.consensus_ratio,
        stage_seconds=timings,
    )
    return RegistrationResult(
        transform=transform,
        diagnostics=diagnostics,
        votes=votes if keep_votes else None,
    )
