"""Point-cloud container, exact spatial queries, and rigid-transform algebra.

Conventions used throughout the package:

* points are float64 arrays of shape (N, 3), one row per point;
* rotations are proper orthonormal 3x3 matrices (det +1);
* a rigid transform maps a point p to ``rotation @ p + translation``;
* rotation vectors encode axis * angle with angle in [0, pi].
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .errors import DegenerateInputError, InvalidInputError

F64: TypeAlias = np.float64
Vec3: TypeAlias = NDArray[F64]    # Expected shape: (3,)
Mat3: TypeAlias = NDArray[F64]    # Expected shape: (3, 3)
Points: TypeAlias = NDArray[F64]  # Expected shape: (N, 3)

UNIT_NORMAL_TOL = 1e-6
ROTATION_TOL = 1e-9
CURVATURE_MAX = 1.0 / 3.0

# Rotation-vector extraction switches to the symmetric-part branch above this
# angle, where the sin-based formula loses accuracy.
_LOG_LARGE_ANGLE = 3.0
_LOG_SMALL_ANGLE = 1e-7


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


def as_points(value, name: str = "points") -> Points:
    """Validate and convert an array-like to float64 points of shape (N, 3)."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"{name} must have shape (N, 3), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def as_vec3(value, name: str = "vector") -> Vec3:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise InvalidInputError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# point cloud
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable point set with optional per-point surface attributes.

    Attributes
    ----------
    points:
        (N, 3) positions.
    normals:
        (N, 3) unit normals, or None before normal estimation.
    curvatures:
        (N,) per-point curvature values in [0, 1/3], or None.
    viewpoint:
        Optional sensor position used to orient normal signs.
    neighborhood_eigenvalues:
        (N, 3) covariance eigenvalues per point, sorted descending.  Cached by
        :func:`estimate_normals` so curvature computation can reuse them.
    """

    points: Points
    normals: Points | None = None
    curvatures: NDArray[F64] | None = None
    viewpoint: Vec3 | None = None
    neighborhood_eigenvalues: NDArray[F64] | None = None

    def __post_init__(self) -> None:
        pts = as_points(self.points)
        object.__setattr__(self, "points", _readonly(pts))
        n = len(pts)
        if self.normals is not None:
            nrm = as_points(self.normals, "normals")
            if len(nrm) != n:
                raise InvalidInputError("normals length does not match points")
            lengths = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(lengths - 1.0) > UNIT_NORMAL_TOL):
                worst = float(np.abs(lengths - 1.0).max())
                raise InvalidInputError(f"normals must be unit length (max deviation {worst:.3g})")
            object.__setattr__(self, "normals", _readonly(nrm))
        if self.curvatures is not None:
            cur = np.asarray(self.curvatures, dtype=np.float64).reshape(-1)
            if len(cur) != n:
                raise InvalidInputError("curvatures length does not match points")
            if np.any(cur < -1e-12) or np.any(cur > CURVATURE_MAX + 1e-9):
                raise InvalidInputError("curvatures must lie in [0, 1/3]")
            object.__setattr__(self, "curvatures", _readonly(cur))
        if self.viewpoint is not None:
            object.__setattr__(self, "viewpoint", _readonly(as_vec3(self.viewpoint, "viewpoint")))
        if self.neighborhood_eigenvalues is not None:
            ev = as_points(self.neighborhood_eigenvalues, "neighborhood_eigenvalues")
            if len(ev) != n:
                raise InvalidInputError("neighborhood_eigenvalues length does not match points")
            object.__setattr__(self, "neighborhood_eigenvalues", _readonly(ev))

    def __len__(self) -> int:
        return len(self.points)


# ---------------------------------------------------------------------------
# exact nearest-neighbor index
# ---------------------------------------------------------------------------


class SpatialIndex:
    """Exact nearest-neighbor and radius queries over a fixed point set.

    Results match a brute-force linear scan; equal distances are broken by the
    lower point index.  Works for any dimensionality (3D points, descriptor
    vectors, ...).  Instances are immutable and safe to share.
    """

    def __init__(self, data) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise InvalidInputError(f"index data must have shape (N, d) with N >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise InvalidInputError("index data contains non-finite values")
        self._data = _readonly(arr)
        self._tree = cKDTree(arr)

    def __len__(self) -> int:
        return len(self._data)

    @property
    def data(self) -> np.ndarray:
        return self._data

    def _ranked(self, query: np.ndarray, candidates: np.ndarray) -> np.ndarray:
        """Order candidate indices by (squared distance, index)."""
        delta = self._data[candidates] - query
        d2 = np.einsum("ij,ij->i", delta, delta)
        return candidates[np.lexsort((candidates, d2))]

    def nearest(self, query, k: int = 1) -> np.ndarray:
        """Indices of the k nearest points to `query`, ties broken by lower index."""
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self._data.shape[1]:
            raise InvalidInputError("query dimensionality does not match index data")
        if not 1 <= k <= len(self):
            raise InvalidInputError(f"k must be in [1, {len(self)}], got {k}")
        kth = self._tree.query(q, k=k)[0]
        kth = float(np.atleast_1d(kth)[-1])
        # Over-inflate the candidate radius slightly so last-ulp disagreements
        # between tree arithmetic and our own cannot drop a tied candidate.
        candidates = self._tree.query_ball_point(q, kth * (1.0 + 1e-9) + 1e-300)
        return self._ranked(q, np.asarray(candidates, dtype=np.intp))[:k]

    def nearest_many(self, queries, k: int) -> np.ndarray:
        """Vectorized :meth:`nearest` over many queries; returns (M, k) indices."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if q.shape[1] != self._data.shape[1]:
            raise InvalidInputError("query dimensionality does not match index data")
        n = len(self)
        if not 1 <= k <= n:
            raise InvalidInputError(f"k must be in [1, {n}], got {k}")
        fetch = min(k + 8, n)
        idx = self._tree.query(q, k=fetch)[1]
        if fetch == 1:
            idx = idx[:, None]
        delta = self._data[idx] - q[:, None, :]
        d2 = np.einsum("mkj,mkj->mk", delta, delta)
        # Sort each row by index first, then stably by distance, which yields
        # (distance, index) order without a per-row lexsort.
        order = np.argsort(idx, axis=1, kind="stable")
        idx = np.take_along_axis(idx, order, axis=1)
        d2 = np.take_along_axis(d2, order, axis=1)
        order = np.argsort(d2, axis=1, kind="stable")
        idx = np.take_along_axis(idx, order, axis=1)
        d2 = np.take_along_axis(d2, order, axis=1)
        if fetch < n:
            # A row is suspect when unfetched points might tie the kth distance.
            margin = d2[:, k - 1] * (1.0 + 1e-9) + 1e-300
            risky = np.nonzero(d2[:, -1] <= margin)[0]
            for row in risky:
                idx[row, :k] = self.nearest(q[row], k)
        return np.ascontiguousarray(idx[:, :k])

    def within(self, query, radius: float) -> np.ndarray:
        """Indices of all points with distance <= radius, ascending by index."""
        if radius < 0:
            raise InvalidInputError(f"radius must be non-negative, got {radius}")
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        found = self._tree.query_ball_point(q, radius)
        return np.sort(np.asarray(found, dtype=np.intp))

    def within_concat(self, queries, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """Bulk radius query.

        Returns (counts, flat) where `flat` concatenates the per-query result
        indices (each ascending) and `counts[i]` is the number of hits for
        query i.
        """
        if radius < 0:
            raise InvalidInputError(f"radius must be non-negative, got {radius}")
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        balls = self._tree.query_ball_point(q, radius, return_sorted=True)
        counts = np.fromiter((len(b) for b in balls), dtype=np.intp, count=len(balls))
        total = int(counts.sum())
        flat = np.empty(total, dtype=np.intp)
        pos = 0
        for b in balls:
            flat[pos:pos + len(b)] = b
            pos += len(b)
        return counts, flat


# ---------------------------------------------------------------------------
# surface normals and sampling density
# ---------------------------------------------------------------------------


def estimate_normals(cloud: PointCloud, neighbor_count: int = 20, viewpoint=None) -> PointCloud:
    """Estimate per-point unit normals from local covariance.

    For each point x the covariance of its `neighbor_count` nearest neighbors
    (the point itself included) is accumulated around x, not around the
    neighborhood centroid.  The eigenvector of the smallest eigenvalue is the
    normal; eigenvalues are cached on the returned cloud for curvature use.

    Normal signs are flipped so that ``n . (viewpoint - x) >= 0``.  Without a
    viewpoint (argument or cloud attribute) normals are oriented toward +z.
    """
    if neighbor_count < 3:
        raise InvalidInputError(f"neighbor_count must be >= 3, got {neighbor_count}")
    if len(cloud) < neighbor_count:
        raise InvalidInputError(
            f"cloud has {len(cloud)} points, fewer than neighbor_count={neighbor_count}"
        )
    pts = cloud.points
    index = SpatialIndex(pts)
    nbr = index.nearest_many(pts, k=neighbor_count)
    diffs = pts[nbr] - pts[:, None, :]
    cov = np.einsum("nkj,nkl->njl", diffs, diffs) / float(neighbor_count)
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending eigenvalues
    degenerate = np.nonzero(eigvals[:, 2] <= 1e-300)[0]
    if degenerate.size:
        i = int(degenerate[0])
        raise DegenerateInputError(
            f"all {neighbor_count} nearest neighbors of point {i} coincide; no normal is defined"
        )
    normals = eigvecs[:, :, 0]
    if viewpoint is None:
        viewpoint = cloud.viewpoint
    if viewpoint is not None:
        toward = as_vec3(viewpoint, "viewpoint") - pts
    else:
        toward = np.broadcast_to(np.array([0.0, 0.0, 1.0]), pts.shape)
    flip = np.einsum("ij,ij->i", normals, toward) < 0.0
    normals = np.where(flip[:, None], -normals, normals)
    return dataclasses.replace(
        cloud,
        normals=normals,
        neighborhood_eigenvalues=eigvals[:, ::-1],
    )


def cloud_resolution(cloud_x: PointCloud, cloud_y: PointCloud) -> float:
    """Characteristic sampling distance of a cloud pair.

    For each cloud, take the median over points of the distance to the nearest
    other point (self excluded by index, so duplicate coordinates count).  The
    result is the mean of the two medians.  Rigid motion leaves it unchanged.
    """
    medians = []
    for cloud in (cloud_x, cloud_y):
        if len(cloud) < 2:
            raise InvalidInputError("cloud_resolution needs at least 2 points per cloud")
        tree = cKDTree(cloud.points)
        dist = tree.query(cloud.points, k=2)[0][:, 1]
        medians.append(float(np.median(dist)))
    return float((medians[0] + medians[1]) / 2.0)


# ---------------------------------------------------------------------------
# rigid transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion ``p -> rotation @ p + translation``."""

    rotation: Mat3
    translation: Vec3

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise InvalidInputError(f"rotation must be 3x3, got {rot.shape}")
        if np.abs(rot.T @ rot - np.eye(3)).max() > ROTATION_TOL:
            raise InvalidInputError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ROTATION_TOL:
            raise InvalidInputError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", _readonly(rot))
        object.__setattr__(self, "translation", _readonly(as_vec3(self.translation, "translation")))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidInputError(f"homogeneous matrix must be 4x4, got {m.shape}")
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
            raise InvalidInputError("bottom row of a homogeneous rigid matrix must be (0, 0, 0, 1)")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rot_t = self.rotation.T
        return RigidTransform(rot_t, -rot_t @ self.translation)

    def transform_points(self, points) -> Points:
        pts = as_points(points)
        return pts @ self.rotation.T + self.translation


def apply_transform(transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Rigidly move a cloud: positions, normals, and viewpoint all follow.

    Curvatures and cached eigenvalues are invariant under rigid motion and are
    carried over unchanged.
    """
    normals = None
    if cloud.normals is not None:
        normals = cloud.normals @ transform.rotation.T
    viewpoint = None
    if cloud.viewpoint is not None:
        viewpoint = transform.rotation @ cloud.viewpoint + transform.translation
    return dataclasses.replace(
        cloud,
        points=transform.transform_points(cloud.points),
        normals=normals,
        viewpoint=viewpoint,
    )


# ---------------------------------------------------------------------------
# rotation <-> rotation-vector conversions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RotationVector:
    """Axis-angle encoding of a rotation: direction = axis, length = angle."""

    vector: Vec3

    def __post_init__(self) -> None:
        object.__setattr__(self, "vector", _readonly(as_vec3(self.vector, "rotation vector")))

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.vector))

    @property
    def axis(self) -> Vec3:
        angle = self.angle
        if angle == 0.0:
            return np.zeros(3)
        return self.vector / angle


def rotation_vectors_to_matrices(vectors) -> np.ndarray:
    """Batched axis-angle exponential: (M, 3) vectors to (M, 3, 3) rotations."""
    r = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    theta = np.linalg.norm(r, axis=1)
    out = np.broadcast_to(np.eye(3), (len(r), 3, 3)).copy()
    active = theta > 0.0
    if not active.any():
        return out
    axis = r[active] / theta[active, None]
    x, y, z = axis[:, 0], axis[:, 1], axis[:, 2]
    zero = np.zeros_like(x)
    skew = np.stack(
        [zero, -z, y, z, zero, -x, -y, x, zero], axis=1
    ).reshape(-1, 3, 3)
    sin = np.sin(theta[active])[:, None, None]
    cos1 = (1.0 - np.cos(theta[active]))[:, None, None]
    out[active] = np.eye(3) + sin * skew + cos1 * (skew @ skew)
    return out


def rotation_matrices_to_vectors(matrices) -> np.ndarray:
    """Batched matrix logarithm: (M, 3, 3) rotations to (M, 3) vectors.

    Angles land in [0, pi].  Near pi the axis is recovered from the symmetric
    part of the matrix, which stays well conditioned where the sin-based
    formula degrades; the axis sign is then fixed from the skew part, with a
    deterministic sign convention at exactly pi.
    """
    rot = np.asarray(matrices, dtype=np.float64)
    single = rot.ndim == 2
    rot = rot.reshape(-1, 3, 3)
    trace = np.einsum("mii->m", rot)
    cos = np.clip((trace - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    vee = np.stack(
        [
            rot[:, 2, 1] - rot[:, 1, 2],
            rot[:, 0, 2] - rot[:, 2, 0],
            rot[:, 1, 0] - rot[:, 0, 1],
        ],
        axis=1,
    )
    out = 0.5 * vee  # small-angle limit, exact at theta = 0
    mid = (theta >= _LOG_SMALL_ANGLE) & (theta <= _LOG_LARGE_ANGLE)
    if mid.any():
        scale = theta[mid] / (2.0 * np.sin(theta[mid]))
        out[mid] = scale[:, None] * vee[mid]
    big = theta > _LOG_LARGE_ANGLE
    if big.any():
        sym = 0.5 * (rot[big] + rot[big].transpose(0, 2, 1))
        outer = (sym - cos[big, None, None] * np.eye(3)) / (1.0 - cos[big, None, None])
        # Column with the largest diagonal entry carries the axis most strongly.
        col = np.argmax(np.einsum("mii->mi", outer), axis=1)
        axis = np.take_along_axis(outer, col[:, None, None], axis=2)[:, :, 0]
        axis /= np.linalg.norm(axis, axis=1)[:, None]
        sign = np.einsum("mj,mj->m", vee[big], axis)
        flip = sign < 0.0
        tied = np.abs(sign) <= 1e-12
        if tied.any():
            # Angle is exactly pi: both signs represent the same rotation, so
            # pick the one whose largest-magnitude component is positive.
            lead = np.argmax(np.abs(axis[tied]), axis=1)
            lead_val = np.take_along_axis(axis[tied], lead[:, None], axis=1)[:, 0]
            flip[tied] = lead_val < 0.0
        axis[flip] *= -1.0
        out[big] = theta[big, None] * axis
    return out[0] if single else out


def vector_to_rotation(vector) -> Mat3:
    """Rotation matrix of an axis-angle vector (RotationVector or 3-array)."""
    if isinstance(vector, RotationVector):
        vector = vector.vector
    return rotation_vectors_to_matrices(as_vec3(vector, "rotation vector")[None])[0]


def rotation_to_vector(rotation) -> RotationVector:
    """Axis-angle vector of a rotation (RigidTransform or 3x3 matrix)."""
    if isinstance(rotation, RigidTransform):
        rotation = rotation.rotation
    rot = np.asarray(rotation, dtype=np.float64)
    if rot.shape != (3, 3):
        raise InvalidInputError(f"rotation must be 3x3, got {rot.shape}")
    return RotationVector(rotation_matrices_to_vectors(rot))
