"""Curvature keypoints and local surface descriptors (FPFH, point-pair features)."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateInputError, InvalidInputError
from .geometry import CURVATURE_MAX, F64, PointCloud, SpatialIndex, Vec3, as_vec3, _readonly

log = logging.getLogger(__name__)

FPFH_BINS_PER_FEATURE = 11
FPFH_SIZE = 3 * FPFH_BINS_PER_FEATURE


# ---------------------------------------------------------------------------
# curvature and keypoints
# ---------------------------------------------------------------------------


def compute_curvatures(cloud: PointCloud) -> PointCloud:
    """Per-point curvature from cached neighborhood eigenvalues.

    Curvature is the smallest eigenvalue divided by the eigenvalue sum, which
    lies in [0, 1/3]: 0 on a perfect plane, 1/3 for fully isotropic scatter.
    Points whose eigenvalue sum is zero get curvature 0 and are counted in a
    warning.
    """
    if cloud.neighborhood_eigenvalues is None:
        raise InvalidInputError("cloud has no cached eigenvalues; run estimate_normals first")
    eig = np.maximum(cloud.neighborhood_eigenvalues, 0.0)
    total = eig.sum(axis=1)
    flat = total <= 0.0
    if flat.any():
        log.warning("curvature undefined for %d points with zero eigenvalue sum", int(flat.sum()))
    with np.errstate(invalid="ignore", divide="ignore"):
        curv = np.where(flat, 0.0, eig[:, 2] / np.where(flat, 1.0, total))
    curv = np.clip(curv, 0.0, CURVATURE_MAX)
    return dataclasses.replace(cloud, curvatures=curv)


@dataclass(frozen=True, eq=False)
class Keypoint:
    """A selected cloud point carrying the attributes later stages need."""

    index: int
    position: Vec3
    normal: Vec3
    curvature: float
    descriptor: NDArray[F64] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _readonly(as_vec3(self.position, "position")))
        object.__setattr__(self, "normal", _readonly(as_vec3(self.normal, "normal")))
        if self.descriptor is not None:
            desc = np.asarray(self.descriptor, dtype=np.float64).reshape(-1)
            if desc.shape != (FPFH_SIZE,):
                raise InvalidInputError(f"descriptor must have {FPFH_SIZE} bins, got {desc.shape}")
            if np.any(desc < 0.0):
                raise InvalidInputError("descriptor bins must be non-negative")
            object.__setattr__(self, "descriptor", _readonly(desc))


def detect_keypoints(cloud: PointCloud, count: int) -> list[Keypoint]:
    """The `count` highest-curvature points, ties broken by lower point index."""
    if cloud.normals is None or cloud.curvatures is None:
        raise InvalidInputError("cloud needs normals and curvatures before keypoint detection")
    if not 1 <= count <= len(cloud):
        raise InvalidInputError(f"count must be in [1, {len(cloud)}], got {count}")
    order = np.argsort(-cloud.curvatures, kind="stable")[:count]
    return [
        Keypoint(
            index=int(i),
            position=cloud.points[i],
            normal=cloud.normals[i],
            curvature=float(cloud.curvatures[i]),
        )
        for i in order
    ]


# ---------------------------------------------------------------------------
# FPFH descriptors
# ---------------------------------------------------------------------------


def _pair_features(src_pts, src_nrm, dst_pts, dst_nrm):
    """Angular pair features between (source, target) oriented point rows.

    For each row pair the point whose normal is better aligned (in absolute
    value) with the connecting segment acts as the frame origin.  Returns
    (theta, alpha, cos_phi, distance, valid) where invalid rows (coincident
    points or a normal parallel to the segment) must be skipped.
    """
    d = dst_pts - src_pts
    dist = np.linalg.norm(d, axis=1)
    valid = dist > 0.0
    safe = np.where(valid, dist, 1.0)
    dn = d / safe[:, None]
    cos_s = np.einsum("ij,ij->i", src_nrm, dn)
    cos_t = np.einsum("ij,ij->i", dst_nrm, dn)
    swap = np.abs(cos_s) < np.abs(cos_t)
    u = np.where(swap[:, None], dst_nrm, src_nrm)
    n_other = np.where(swap[:, None], src_nrm, dst_nrm)
    seg = np.where(swap[:, None], -dn, dn)
    cos_phi = np.where(swap, -cos_t, cos_s)
    v = np.cross(seg, u)
    v_norm = np.linalg.norm(v, axis=1)
    valid &= v_norm > 1e-12
    v /= np.where(valid, v_norm, 1.0)[:, None]
    w = np.cross(u, v)
    alpha = np.einsum("ij,ij->i", v, n_other)
    theta = np.arctan2(np.einsum("ij,ij->i", w, n_other), np.einsum("ij,ij->i", u, n_other))
    return theta, alpha, cos_phi, dist, valid


def _feature_bins(theta, alpha, cos_phi) -> np.ndarray:
    """Flattened 33-bin index per pair: 11 bins each for theta, alpha, cos_phi."""
    nb = FPFH_BINS_PER_FEATURE
    b_theta = np.clip(((theta + np.pi) / (2.0 * np.pi) * nb).astype(np.intp), 0, nb - 1)
    b_alpha = np.clip(((alpha + 1.0) / 2.0 * nb).astype(np.intp), 0, nb - 1)
    b_phi = np.clip(((cos_phi + 1.0) / 2.0 * nb).astype(np.intp), 0, nb - 1)
    return b_theta, b_alpha + nb, b_phi + 2 * nb


def _simple_histograms(points, normals, centers, counts, flat_nbrs) -> np.ndarray:
    """Per-center angular histograms over radius neighborhoods.

    `centers` are point indices; `counts`/`flat_nbrs` give each center's
    neighbor indices (center itself included, removed here).  Each feature
    block of a row is normalized to sum 100; rows with no valid pair stay zero.
    """
    n_rows = len(centers)
    hist = np.zeros((n_rows, FPFH_SIZE))
    if len(flat_nbrs) == 0:
        return hist
    rows = np.repeat(np.arange(n_rows, dtype=np.intp), counts)
    src = np.repeat(centers, counts)
    keep = flat_nbrs != src
    rows, src, nbr = rows[keep], src[keep], flat_nbrs[keep]
    theta, alpha, cos_phi, _, valid = _pair_features(
        points[src], normals[src], points[nbr], normals[nbr]
    )
    rows = rows[valid]
    if rows.size == 0:
        return hist
    b1, b2, b3 = (b[valid] for b in _feature_bins(theta, alpha, cos_phi))
    length = n_rows * FPFH_SIZE
    flat = (
        np.bincount(rows * FPFH_SIZE + b1, minlength=length)
        + np.bincount(rows * FPFH_SIZE + b2, minlength=length)
        + np.bincount(rows * FPFH_SIZE + b3, minlength=length)
    )
    hist = flat.reshape(n_rows, FPFH_SIZE).astype(np.float64)
    pair_counts = np.bincount(rows, minlength=n_rows).astype(np.float64)
    nonzero = pair_counts > 0
    hist[nonzero] *= (100.0 / pair_counts[nonzero])[:, None]
    return hist


def _normalize_blocks(hist: np.ndarray) -> np.ndarray:
    """Scale each 11-bin feature block to sum 100 (rows with empty blocks stay zero)."""
    out = hist.copy()
    nb = FPFH_BINS_PER_FEATURE
    for f in range(3):
        block = out[:, f * nb:(f + 1) * nb]
        sums = block.sum(axis=1)
        nz = sums > 0
        block[nz] *= (100.0 / sums[nz])[:, None]
    return out


def compute_fpfh(cloud: PointCloud, keypoints: list[Keypoint], radius: float) -> list[Keypoint]:
    """Attach 33-bin FPFH descriptors to keypoints.

    Two passes over radius neighborhoods: first a per-point angular histogram
    against all neighbors, then for each keypoint the weighted mean of its
    neighbors' histograms (weight 1/distance) added to its own.  Each 11-bin
    feature block of the result is normalized to sum 100.  A keypoint with no
    neighbor inside `radius` gets an all-zero descriptor and a warning.
    """
    if cloud.normals is None:
        raise InvalidInputError("cloud needs normals before descriptor computation")
    if radius <= 0:
        raise InvalidInputError(f"radius must be positive, got {radius}")
    if not keypoints:
        raise InvalidInputError("keypoints must be non-empty")
    pts, nrm = cloud.points, cloud.normals
    kp_idx = np.array([kp.index for kp in keypoints], dtype=np.intp)
    if kp_idx.min() < 0 or kp_idx.max() >= len(cloud):
        raise InvalidInputError("keypoint index out of range for this cloud")

    index = SpatialIndex(pts)
    kp_counts, kp_flat = index.within_concat(pts[kp_idx], radius)

    # Histogram sources: every point appearing in any keypoint neighborhood.
    needed = np.unique(np.concatenate([kp_flat, kp_idx]))
    row_of = np.full(len(cloud), -1, dtype=np.intp)
    row_of[needed] = np.arange(len(needed), dtype=np.intp)
    s_counts, s_flat = index.within_concat(pts[needed], radius)
    simple = _simple_histograms(pts, nrm, needed, s_counts, s_flat)

    out: list[Keypoint] = []
    offsets = np.concatenate([[0], np.cumsum(kp_counts)])
    for ki, kp in enumerate(keypoints):
        ball = kp_flat[offsets[ki]:offsets[ki + 1]]
        dist = np.linalg.norm(pts[ball] - kp.position, axis=1)
        keep = dist > 0.0
        ball, dist = ball[keep], dist[keep]
        if ball.size == 0:
            log.warning("keypoint %d has no neighbors within radius %.6g; zero descriptor", kp.index, radius)
            out.append(dataclasses.replace(kp, descriptor=np.zeros(FPFH_SIZE)))
            continue
        weighted = (simple[row_of[ball]] / dist[:, None]).sum(axis=0) / float(ball.size)
        desc = _normalize_blocks((simple[row_of[kp.index]] + weighted)[None])[0]
        out.append(dataclasses.replace(kp, descriptor=desc))
    return out


# ---------------------------------------------------------------------------
# point-pair features
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PpfDescriptor:
    """Pose-invariant features of an ordered, oriented point pair.

    distance: separation of the two points.
    n1_angle / n2_angle: angle of each normal to the connecting segment.
    normal_angle: angle between the two normals.  All angles in [0, pi].
    """

    distance: float
    n1_angle: float
    n2_angle: float
    normal_angle: float


def compute_ppf(p1, n1, p2, n2) -> PpfDescriptor:
    """Point-pair feature of (p1, n1) -> (p2, n2); raises if the points coincide."""
    p1 = as_vec3(p1, "p1")
    p2 = as_vec3(p2, "p2")
    n1 = as_vec3(n1, "n1")
    n2 = as_vec3(n2, "n2")
    d = p2 - p1
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        raise DegenerateInputError("point-pair feature undefined for coincident points")
    dn = d / dist
    ang = lambda c: float(np.arccos(np.clip(c, -1.0, 1.0)))
    return PpfDescriptor(
        distance=dist,
        n1_angle=ang(np.dot(n1, dn)),
        n2_angle=ang(np.dot(n2, dn)),
        normal_angle=ang(np.dot(n1, n2)),
    )
