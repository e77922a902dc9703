"""Pose voting: per-triplet rigid fits, vote decorrelation, histogram mode."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import DegenerateInputError, EmptySetError, InvalidInputError
from .geometry import (
    RigidTransform,
    _readonly,
    rotation_matrices_to_vectors,
    rotation_vectors_to_matrices,
)
from .triplets import Triplet

log = logging.getLogger(__name__)

# Hard cap on automatically chosen histogram bin counts.
MAX_BINS = 1024

# Rotation votes within this angle of the pi boundary take part in antipode
# canonicalization before decorrelation.
_BOUNDARY_MARGIN = 0.5

# A triplet is degenerate (near-collinear) when the second singular value of
# its cross-covariance falls below this fraction of the first.
_DEGENERATE_RATIO = 1e-12


# ---------------------------------------------------------------------------
# rigid fit per triplet
# ---------------------------------------------------------------------------


def _fit_rigid_batch(moving: np.ndarray, fixed: np.ndarray):
    """Least-squares rigid fits mapping each moving triple onto its fixed triple.

    moving/fixed: (M, 3, 3) stacks of 3-point sets.  Returns (rotations,
    translations, ok) where rows with near-collinear geometry have ok False.
    """
    mc = moving.mean(axis=1)
    fc = fixed.mean(axis=1)
    a = moving - mc[:, None, :]
    b = fixed - fc[:, None, :]
    cross = np.einsum("mpj,mpk->mjk", a, b)
    u, s, vt = np.linalg.svd(cross)
    v = vt.transpose(0, 2, 1)
    det = np.linalg.det(v @ u.transpose(0, 2, 1))
    v_fixed = v.copy()
    v_fixed[:, :, 2] *= det[:, None]
    rot = v_fixed @ u.transpose(0, 2, 1)
    ok = s[:, 1] > _DEGENERATE_RATIO * np.maximum(s[:, 0], 1e-300)
    ok &= s[:, 0] > 0.0
    trans = fc - np.einsum("mjk,mk->mj", rot, mc)
    return rot, trans, ok


def estimate_triplet_transform(triplet: Triplet) -> RigidTransform:
    """Rigid transform mapping the triplet's target points onto its source points.

    Uses the SVD of the 3x3 cross-covariance with a determinant correction so
    the result is always a proper rotation.  Raises for (near-)collinear
    triples, whose rotation about the common line is unconstrained.
    """
    fixed = np.stack([triplet.a.src.position, triplet.b.src.position, triplet.c.src.position])
    moving = np.stack([triplet.a.dst.position, triplet.b.dst.position, triplet.c.dst.position])
    rot, trans, ok = _fit_rigid_batch(moving[None], fixed[None])
    if not ok[0]:
        raise DegenerateInputError(
            f"triplet {triplet.indices} is collinear; its rotation is not unique"
        )
    return RigidTransform(rot[0], trans[0])


# ---------------------------------------------------------------------------
# vote containers
# ---------------------------------------------------------------------------


VoteKind = Literal["rotation", "translation"]


@dataclass(frozen=True, eq=False)
class VoteSet:
    """A stack of 3-vector votes of one kind.

    Rotation votes are axis-angle vectors with norm <= pi; translation votes
    are plain displacement vectors.
    """

    vectors: np.ndarray
    kind: VoteKind

    def __post_init__(self) -> None:
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 2 or vec.shape[1] != 3:
            raise InvalidInputError(f"votes must have shape (N, 3), got {vec.shape}")
        if not np.isfinite(vec).all():
            raise InvalidInputError("votes contain non-finite values")
        if self.kind not in ("rotation", "translation"):
            raise InvalidInputError(f"unknown vote kind {self.kind!r}")
        if self.kind == "rotation" and len(vec):
            worst = float(np.linalg.norm(vec, axis=1).max())
            if worst > math.pi + 1e-9:
                raise InvalidInputError(f"rotation vote norm {worst:.6g} exceeds pi")
        object.__setattr__(self, "vectors", _readonly(vec))

    def __len__(self) -> int:
        return len(self.vectors)


def collect_votes(triplets: list[Triplet]) -> tuple[VoteSet, VoteSet]:
    """Rotation and translation votes from per-triplet rigid fits.

    Degenerate (collinear) triplets are skipped with a warning; the caller can
    recover their count as ``len(triplets) - len(votes)``.  Raises when no
    usable vote remains.
    """
    if not triplets:
        raise EmptySetError("no triplets to vote with")
    fixed = np.empty((len(triplets), 3, 3))
    moving = np.empty((len(triplets), 3, 3))
    for m, t in enumerate(triplets):
        fixed[m, 0] = t.a.src.position
        fixed[m, 1] = t.b.src.position
        fixed[m, 2] = t.c.src.position
        moving[m, 0] = t.a.dst.position
        moving[m, 1] = t.b.dst.position
        moving[m, 2] = t.c.dst.position
    rot, trans, ok = _fit_rigid_batch(moving, fixed)
    skipped = int((~ok).sum())
    if skipped:
        log.warning("skipped %d degenerate triplets while voting", skipped)
    if not ok.any():
        raise EmptySetError("all triplets were degenerate; no votes available")
    rotation_votes = rotation_matrices_to_vectors(rot[ok])
    return (
        VoteSet(vectors=rotation_votes, kind="rotation"),
        VoteSet(vectors=trans[ok], kind="translation"),
    )


# ---------------------------------------------------------------------------
# decorrelation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DecorrelatedFrame:
    """Votes expressed in the orthonormal eigenbasis of their covariance.

    `basis` columns are the covariance eigenvectors (descending eigenvalue);
    `transformed[i] = basis.T @ votes[i]`.
    """

    basis: np.ndarray
    transformed: np.ndarray

    def __post_init__(self) -> None:
        basis = np.asarray(self.basis, dtype=np.float64)
        if basis.shape != (3, 3) or np.abs(basis.T @ basis - np.eye(3)).max() > 1e-9:
            raise InvalidInputError("basis must be a 3x3 orthonormal matrix")
        object.__setattr__(self, "basis", _readonly(basis))
        object.__setattr__(self, "transformed", _readonly(np.atleast_2d(self.transformed)))

    def reconstruct(self) -> np.ndarray:
        """Votes mapped back to the original axes."""
        return self.transformed @ self.basis.T


def _pca_basis(vectors: np.ndarray) -> np.ndarray:
    if len(vectors) < 2:
        log.warning("need at least 2 votes to decorrelate; using identity basis")
        return np.eye(3)
    centered = vectors - vectors.mean(axis=0)
    cov = centered.T @ centered / float(len(vectors))
    if np.abs(cov).max() <= 1e-300:
        return np.eye(3)
    eigvals, eigvecs = np.linalg.eigh(cov)
    basis = eigvecs[:, ::-1]  # descending eigenvalue
    # Deterministic column signs: largest-magnitude entry positive.
    lead = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[lead, np.arange(3)])
    signs[signs == 0.0] = 1.0
    return basis * signs


def decorrelate(votes: VoteSet) -> DecorrelatedFrame:
    """Rotate votes into their covariance eigenbasis.

    With fewer than two votes, or an all-zero covariance (identical votes),
    the basis falls back to identity.
    """
    if len(votes) == 0:
        raise InvalidInputError("cannot decorrelate an empty vote set")
    basis = _pca_basis(votes.vectors)
    return DecorrelatedFrame(basis=basis, transformed=votes.vectors @ basis)


# ---------------------------------------------------------------------------
# histogram mode extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VoteHistogram:
    """Fixed-width histogram anchored so the median falls in the middle bin."""

    bin_count: int
    width: float
    median: float
    counts: np.ndarray
    members: tuple[np.ndarray, ...]

    def bin_edges(self, b: int) -> tuple[float, float]:
        """[left, right) value range of bin b."""
        left = (b - self.bin_count / 2.0) * self.width + self.median
        return left, left + self.width

    def mode_bin(self) -> int:
        """Highest-count bin; ties prefer the bin nearest the center, then lower index."""
        counts = self.counts
        best = np.nonzero(counts == counts.max())[0]
        center = self.bin_count // 2
        return int(best[np.lexsort((best, np.abs(best - center)))[0]])

    def window_values(self, delta: int) -> np.ndarray:
        """All member values within `delta` bins of the mode bin."""
        if delta < 0:
            raise InvalidInputError(f"delta must be >= 0, got {delta}")
        b = self.mode_bin()
        lo = max(0, b - delta)
        hi = min(self.bin_count - 1, b + delta)
        return np.concatenate([self.members[k] for k in range(lo, hi + 1)])


def build_vote_histogram(values, bin_count: int | None = None) -> VoteHistogram:
    """Histogram 1D values with a rule-based width.

    The bin width is twice the interquartile range divided by the cube root
    of the sample count.  Values are placed with
    ``bin = floor(v / width - median / width + bin_count / 2)`` so the median
    sits in the center bin; values binned outside [0, bin_count - 1] are
    discarded.  When `bin_count` is omitted it is chosen to cover the data
    span plus slack, capped at 1024.  Raises DegenerateInputError when the
    interquartile range is zero.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidInputError("cannot histogram an empty sample")
    if not np.isfinite(v).all():
        raise InvalidInputError("histogram values must be finite")
    q1, q3 = np.percentile(v, [25.0, 75.0])
    width = 2.0 * (q3 - q1) * v.size ** (-1.0 / 3.0)
    if width <= 0.0:
        raise DegenerateInputError("interquartile range is zero; histogram width undefined")
    median = float(np.median(v))
    if bin_count is None:
        span = float(v.max() - v.min())
        bin_count = min(int(math.ceil(span / width)) + 3, MAX_BINS)
    if bin_count < 1:
        raise InvalidInputError(f"bin_count must be >= 1, got {bin_count}")
    bins = np.floor(v / width - median / width + bin_count / 2.0).astype(np.int64)
    in_range = (bins >= 0) & (bins < bin_count)
    dropped = int((~in_range).sum())
    if dropped:
        log.debug("histogram discarded %d of %d values outside its bin range", dropped, v.size)
    kept_bins = bins[in_range]
    kept_vals = v[in_range]
    counts = np.bincount(kept_bins, minlength=bin_count)
    order = np.argsort(kept_bins, kind="stable")
    sorted_vals = kept_vals[order]
    starts = np.searchsorted(kept_bins[order], np.arange(bin_count))
    ends = np.searchsorted(kept_bins[order], np.arange(bin_count), side="right")
    members = tuple(sorted_vals[s:e] for s, e in zip(starts, ends))
    return VoteHistogram(
        bin_count=int(bin_count),
        width=float(width),
        median=median,
        counts=counts,
        members=members,
    )


def histogram_mode(values, bin_count: int | None = None, delta: int = 1) -> float:
    """Mean of the values in the densest histogram neighborhood.

    Builds the rule-based histogram, finds the highest-count bin, and averages
    all values within `delta` bins of it.  A sample whose interquartile range
    is zero (so no width can be chosen) falls back to the median.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidInputError("cannot take the mode of an empty sample")
    if delta < 0:
        raise InvalidInputError(f"delta must be >= 0, got {delta}")
    try:
        hist = build_vote_histogram(v, bin_count)
    except DegenerateInputError:
        log.debug("degenerate sample spread; falling back to the median")
        return float(np.median(v))
    return float(hist.window_values(delta).mean())


# ---------------------------------------------------------------------------
# final pose extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AxisMode:
    """Mode of one decorrelated axis plus how many votes backed it."""

    value: float
    window_fraction: float


@dataclass(frozen=True, eq=False)
class PoseStats:
    """Per-axis mode extraction details for a pose estimate."""

    rotation_modes: tuple[AxisMode, AxisMode, AxisMode]
    translation_modes: tuple[AxisMode, AxisMode, AxisMode]

    @property
    def consensus_ratio(self) -> float:
        """Smallest per-axis fraction of votes inside the chosen mode window."""
        fractions = [m.window_fraction for m in self.rotation_modes + self.translation_modes]
        return float(min(fractions))


def _canonicalize_rotation_votes(vectors: np.ndarray) -> np.ndarray:
    """Merge antipodal rotation votes near the pi boundary.

    An axis-angle vector with angle close to pi has an equivalent encoding of
    angle (2*pi - angle) along the opposite axis, so one physical cluster can
    split into two antipodal ones.  Votes within the boundary margin are
    flipped onto the hemisphere of the component-wise median direction (or of
    the dominant second-moment axis when the median direction vanishes).
    """
    norms = np.linalg.norm(vectors, axis=1)
    near = norms > math.pi - _BOUNDARY_MARGIN
    if not near.any():
        return vectors
    ref = np.median(vectors, axis=0)
    if np.linalg.norm(ref) < 1e-12:
        moment = vectors.T @ vectors
        eigvals, eigvecs = np.linalg.eigh(moment)
        ref = eigvecs[:, -1]
        lead = int(np.argmax(np.abs(ref)))
        if ref[lead] < 0.0:
            ref = -ref
    flip = near & (vectors @ ref < 0.0)
    if not flip.any():
        return vectors
    out = vectors.copy()
    scale = 1.0 - 2.0 * math.pi / norms[flip]
    out[flip] = vectors[flip] * scale[:, None]
    return out


def _axis_mode(values: np.ndarray, bin_count: int | None, delta: int) -> AxisMode:
    try:
        hist = build_vote_histogram(values, bin_count)
    except DegenerateInputError:
        med = float(np.median(values))
        backed = float(np.mean(values == med))
        return AxisMode(value=med, window_fraction=backed)
    window = hist.window_values(delta)
    return AxisMode(
        value=float(window.mean()),
        window_fraction=float(len(window) / len(values)),
    )


def estimate_pose_with_stats(
    rotations: VoteSet,
    translations: VoteSet,
    bin_count: int | None = None,
    delta: int = 1,
) -> tuple[RigidTransform, PoseStats]:
    """Consensus rigid transform from rotation and translation votes.

    Each vote family is decorrelated into its covariance eigenbasis, the mode
    of every axis is extracted by histogram, and the per-axis modes are mapped
    back.  Rotation votes are antipode-canonicalized first so clusters near
    the pi boundary do not split.
    """
    if rotations.kind != "rotation" or translations.kind != "translation":
        raise InvalidInputError("estimate_pose expects (rotation, translation) vote sets")
    if len(rotations) == 0 or len(translations) == 0:
        raise EmptySetError("cannot estimate a pose from empty vote sets")

    results: list[np.ndarray] = []
    stats: list[tuple[AxisMode, AxisMode, AxisMode]] = []
    for vectors in (_canonicalize_rotation_votes(rotations.vectors), translations.vectors):
        basis = _pca_basis(vectors)
        transformed = vectors @ basis
        modes = tuple(_axis_mode(transformed[:, axis], bin_count, delta) for axis in range(3))
        stats.append(modes)
        results.append(basis @ np.array([m.value for m in modes]))

    rotation = rotation_vectors_to_matrices(results[0][None])[0]
    pose = RigidTransform(rotation, results[1])
    return pose, PoseStats(rotation_modes=stats[0], translation_modes=stats[1])


def estimate_pose(
    rotations: VoteSet,
    translations: VoteSet,
    bin_count: int | None = None,
    delta: int = 1,
) -> RigidTransform:
    """Consensus rigid transform from votes (see estimate_pose_with_stats)."""
    return estimate_pose_with_stats(rotations, translations, bin_count, delta)[0]


# ---------------------------------------------------------------------------
# debug dump
# ---------------------------------------------------------------------------


def dump_votes(directory, rotations: VoteSet, translations: VoteSet, delta: int = 1) -> None:
    """Write votes and per-axis histograms as plain text for offline plotting.

    Produces votes_<kind>.txt (one vote per line) and hist_<kind>_axis<a>.txt
    (bin index, left edge, right edge, count) under `directory`.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for votes in (rotations, translations):
        vectors = votes.vectors
        if votes.kind == "rotation":
            vectors = _canonicalize_rotation_votes(vectors)
        with open(directory / f"votes_{votes.kind}.txt", "w", encoding="ascii") as fh:
            for row in vectors:
                fh.write(f"{row[0]:.17g} {row[1]:.17g} {row[2]:.17g}\n")
        basis = _pca_basis(vectors)
        transformed = vectors @ basis
        for axis in range(3):
            path = directory / f"hist_{votes.kind}_axis{axis}.txt"
            try:
                hist = build_vote_histogram(transformed[:, axis])
            except DegenerateInputError:
                path.write_text("# degenerate axis: zero interquartile range\n", encoding="ascii")
                continue
            with open(path, "w", encoding="ascii") as fh:
                fh.write("# bin left right count\n")
                for b in range(hist.bin_count):
                    left, right = hist.bin_edges(b)
                    fh.write(f"{b} {left:.17g} {right:.17g} {int(hist.counts[b])}\n")
