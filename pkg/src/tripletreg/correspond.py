"""Descriptor-based correspondence generation and reliability scoring."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EmptySetError, InvalidInputError
from .features import Keypoint
from .geometry import SpatialIndex

log = logging.getLogger(__name__)

# Kernel-sum chunk rows; bounds peak memory of the pairwise distance blocks.
_SCORE_CHUNK = 256


@dataclass(frozen=True, eq=False)
class Correspondence:
    """A tentative match between a source-cloud and a target-cloud keypoint.

    `src` belongs to the fixed cloud X and `dst` to the moving cloud Y; the
    estimated transform maps dst positions onto src positions.  `reliability`
    stays None until the set is scored.
    """

    src: Keypoint
    dst: Keypoint
    reliability: float | None = None


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Ordered correspondences plus the cloud-pair resolution used for scaling."""

    items: tuple[Correspondence, ...]
    resolution: float

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise InvalidInputError(f"resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) position arrays, each (N, 3), in item order."""
        src = np.array([c.src.position for c in self.items])
        dst = np.array([c.dst.position for c in self.items])
        return src, dst


def build_correspondences(
    src_keypoints: list[Keypoint],
    dst_keypoints: list[Keypoint],
    k: int,
    curvature_threshold: float,
    resolution: float,
    extra_predicate: Callable[[Keypoint, Keypoint], bool] | None = None,
) -> CorrespondenceSet:
    """Match each source keypoint to its k nearest target descriptors.

    Candidates are the exact k nearest neighbors in descriptor space (L2);
    a pair survives only if the curvature difference is strictly below
    `curvature_threshold` (and passes `extra_predicate` when given).  Output
    order is source-major, neighbor-rank-minor.
    """
    if not src_keypoints or not dst_keypoints:
        raise InvalidInputError("both keypoint lists must be non-empty")
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    if curvature_threshold <= 0:
        raise InvalidInputError(f"curvature_threshold must be positive, got {curvature_threshold}")
    if any(kp.descriptor is None for kp in src_keypoints + dst_keypoints):
        raise InvalidInputError("keypoints need descriptors; run compute_fpfh first")

    dst_desc = np.stack([kp.descriptor for kp in dst_keypoints])
    index = SpatialIndex(dst_desc)
    kk = min(k, len(dst_keypoints))
    src_desc = np.stack([kp.descriptor for kp in src_keypoints])
    neighbor_rows = index.nearest_many(src_desc, k=kk)

    items: list[Correspondence] = []
    for src_kp, row in zip(src_keypoints, neighbor_rows):
        for j in row:
            dst_kp = dst_keypoints[int(j)]
            if abs(src_kp.curvature - dst_kp.curvature) >= curvature_threshold:
                continue
            if extra_predicate is not None and not extra_predicate(src_kp, dst_kp):
                continue
            items.append(Correspondence(src=src_kp, dst=dst_kp))
    if not items:
        raise EmptySetError("no correspondence passed the curvature gate")
    return CorrespondenceSet(items=tuple(items), resolution=resolution)


def _subset_scores(src: np.ndarray, dst: np.ndarray, h: float) -> np.ndarray:
    """Length-consistency score of each member against its whole subset.

    Score i sums, over subset members j, a kernel of the difference between
    the squared src distance and the squared dst distance of pair (i, j);
    agreement contributes 1, disagreement decays quadratically with the
    residual measured in units of h.  The i = j term contributes exactly 1.
    """
    n = len(src)
    scores = np.empty(n)
    inv_h2 = 1.0 / (h * h)
    for start in range(0, n, _SCORE_CHUNK):
        stop = min(start + _SCORE_CHUNK, n)
        ds = src[start:stop, None, :] - src[None, :, :]
        dd = dst[start:stop, None, :] - dst[None, :, :]
        d2_src = np.einsum("ijk,ijk->ij", ds, ds)
        d2_dst = np.einsum("ijk,ijk->ij", dd, dd)
        resid = d2_src - d2_dst
        scores[start:stop] = (1.0 / (1.0 + inv_h2 * resid * resid)).sum(axis=1)
    return scores


def score_reliability(
    cset: CorrespondenceSet, range_factor: float, divisions: int
) -> CorrespondenceSet:
    """Score correspondences by pairwise length consistency and sort descending.

    The set is split round-robin (by item position) into `divisions` subsets;
    each item is scored only against its own subset and the sum is scaled by
    len(set) / len(subset) to stay comparable with a full evaluation.  The
    kernel width is ``range_factor * resolution``.  Ties keep the original
    relative order.
    """
    n = len(cset)
    if n < 1:
        raise InvalidInputError("cannot score an empty correspondence set")
    h = range_factor * cset.resolution
    if h <= 0:
        raise InvalidInputError(f"kernel width must be positive, got {h}")
    if divisions < 1:
        raise InvalidInputError(f"divisions must be >= 1, got {divisions}")
    if divisions > n:
        log.warning("divisions=%d exceeds set size %d; clamping", divisions, n)
        divisions = n

    src, dst = cset.positions()
    scores = np.empty(n)
    positions = np.arange(n)
    for d in range(divisions):
        members = positions[positions % divisions == d]
        subset_scores = _subset_scores(src[members], dst[members], h)
        scores[members] = subset_scores * (n / float(len(members)))

    order = np.argsort(-scores, kind="stable")
    items = tuple(
        Correspondence(src=cset.items[i].src, dst=cset.items[i].dst, reliability=float(scores[i]))
        for i in order
    )
    return CorrespondenceSet(items=items, resolution=cset.resolution)
