"""Registration accuracy metrics and synthetic multi-view dataset generation."""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from .errors import FileFormatError, InvalidInputError
from .geometry import PointCloud, as_vec3, estimate_normals
from .ply_io import read_ply, read_transform, write_ply, write_transform

# Spherical-flip radius exponent for hidden-point removal: the mirror sphere
# is the farthest point distance times 10 to this power.
HPR_EXPONENT = 3.0

_VIEW_RE = re.compile(r"^view_(\d{2})\.ply$")


# ---------------------------------------------------------------------------
# accuracy metric
# ---------------------------------------------------------------------------


def _apply_homogeneous(matrix: np.ndarray, points: np.ndarray) -> np.ndarray:
    return points @ matrix[:3, :3].T + matrix[:3, 3]


def rmse(
    fixed: PointCloud, moving: PointCloud, estimated, ground_truth
) -> float:
    """Symmetric root-mean-square registration error against a reference pose.

    Let D be the discrepancy transform (inverse reference composed with the
    estimate).  The error sums squared displacements of the fixed cloud under
    the inverse discrepancy and of the moving cloud under the discrepancy,
    normalized by the total point count:

        sqrt((sum ||D^-1 x - x||^2 + sum ||D y - y||^2) / (|X| + |Y|))

    A perfect estimate gives 0; a pure-translation discrepancy u gives ||u||.
    """
    est = np.asarray(estimated, dtype=np.float64)
    ref = np.asarray(ground_truth, dtype=np.float64)
    for name, m in (("estimated", est), ("ground_truth", ref)):
        if m.shape != (4, 4):
            raise InvalidInputError(f"{name} must be a 4x4 matrix, got {m.shape}")
        if abs(np.linalg.det(m)) < 1e-12:
            raise InvalidInputError(f"{name} transform is singular")
    if len(fixed) == 0 or len(moving) == 0:
        raise InvalidInputError("both clouds must be non-empty")
    disc = np.linalg.inv(ref) @ est
    disc_inv = np.linalg.inv(disc)
    dx = _apply_homogeneous(disc_inv, fixed.points) - fixed.points
    dy = _apply_homogeneous(disc, moving.points) - moving.points
    total = float(np.einsum("ij,ij->", dx, dx) + np.einsum("ij,ij->", dy, dy))
    return math.sqrt(total / (len(fixed) + len(moving)))


def rotation_error_degrees(estimated, ground_truth) -> float:
    """Geodesic angle between the rotation blocks of two 4x4 transforms."""
    est = np.asarray(estimated, dtype=np.float64)[:3, :3]
    ref = np.asarray(ground_truth, dtype=np.float64)[:3, :3]
    cos = np.clip((np.trace(ref.T @ est) - 1.0) / 2.0, -1.0, 1.0)
    return math.degrees(math.acos(cos))


# ---------------------------------------------------------------------------
# visibility
# ---------------------------------------------------------------------------


def hidden_point_removal(points: np.ndarray, camera, exponent: float = HPR_EXPONENT) -> np.ndarray:
    """Indices of points visible from `camera` by the spherical-flip test.

    Points are inverted through a sphere around the camera whose radius is
    the farthest point distance times 10**exponent; points on the convex hull
    of the flipped set (camera included) are visible.  Output is ascending.
    """
    pts = np.asarray(points, dtype=np.float64)
    cam = as_vec3(camera, "camera")
    rel = pts - cam
    norms = np.linalg.norm(rel, axis=1)
    if np.any(norms == 0.0):
        raise InvalidInputError("a point coincides with the camera")
    radius = norms.max() * 10.0 ** exponent
    flipped = rel + 2.0 * (radius - norms)[:, None] * rel / norms[:, None]
    hull = ConvexHull(np.vstack([flipped, np.zeros(3)]))
    visible = hull.vertices[hull.vertices < len(pts)]
    return np.sort(visible)


# ---------------------------------------------------------------------------
# ring-view synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RingDataset:
    """Partial views of a model rotated in fixed steps about the global y axis.

    `transforms[i]` is the homogeneous pose applied to the model to produce
    view i, so composing transform i with the inverse of transform j maps
    view j coordinates onto view i coordinates.
    """

    model_id: str
    views: tuple[PointCloud, ...]
    transforms: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.views) != len(self.transforms):
            raise InvalidInputError("views and transforms must have equal length")
        if len(self.views) < 2:
            raise InvalidInputError("a ring dataset needs at least 2 views")

    def __len__(self) -> int:
        return len(self.views)

    def adjacent_pairs(self) -> list[tuple[int, int]]:
        """View index pairs (i, i+1) around the ring, wrap-around included."""
        n = len(self.views)
        return [(i, (i + 1) % n) for i in range(n)]

    def relative_transform(self, fixed_view: int, moving_view: int) -> np.ndarray:
        """Reference transform mapping `moving_view` onto `fixed_view` coordinates."""
        return self.transforms[fixed_view] @ np.linalg.inv(self.transforms[moving_view])


def _rotation_about_y(degrees: float) -> np.ndarray:
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def generate_ring_views(
    model: PointCloud,
    views: int = 18,
    step_degrees: float = 20.0,
    camera=None,
    normal_k: int = 20,
    model_id: str = "model",
) -> RingDataset:
    """Render a ring of self-occluded views by rotating a model before a camera.

    The model turns `step_degrees` about the global y axis per view; the view
    count times the step must cover 360 degrees.  Visibility combines a
    normal-facing test with spherical-flip hidden-point removal.  Model
    normals are estimated (oriented away from the centroid) when absent.  The
    camera defaults to 8 bounding radii along +z and must stay outside the
    model's bounding sphere.
    """
    if views < 2:
        raise InvalidInputError(f"need at least 2 views, got {views}")
    if abs(views * step_degrees - 360.0) > 1e-9:
        raise InvalidInputError(
            f"views * step must equal 360 degrees, got {views} * {step_degrees}"
        )
    centroid = model.points.mean(axis=0)
    bounding = float(np.linalg.norm(model.points - centroid, axis=1).max())
    if camera is None:
        camera = centroid + np.array([0.0, 0.0, 8.0 * bounding])
    cam = as_vec3(camera, "camera")
    if np.linalg.norm(cam - centroid) <= bounding:
        raise InvalidInputError("camera lies inside the model's bounding sphere")
    if model.normals is None:
        oriented = estimate_normals(model, neighbor_count=normal_k, viewpoint=centroid)
        # Toward-centroid orientation flipped outward suits closed star-shaped models.
        model = dataclasses.replace(model, normals=-oriented.normals,
                                    neighborhood_eigenvalues=oriented.neighborhood_eigenvalues)

    out_views: list[PointCloud] = []
    out_transforms: list[np.ndarray] = []
    for v in range(views):
        rot = _rotation_about_y(v * step_degrees)
        pts = model.points @ rot.T
        nrm = model.normals @ rot.T
        facing = np.einsum("ij,ij->i", nrm, cam - pts) > 0.0
        visible = hidden_point_removal(pts, cam)
        mask = np.zeros(len(pts), dtype=bool)
        mask[visible] = True
        mask &= facing
        keep = np.nonzero(mask)[0]
        if keep.size == 0:
            raise InvalidInputError(f"view {v} sees no points; camera placement is unusable")
        transform = np.eye(4)
        transform[:3, :3] = rot
        out_views.append(PointCloud(points=pts[keep], normals=nrm[keep], viewpoint=cam))
        out_transforms.append(transform)
    return RingDataset(model_id=model_id, views=tuple(out_views), transforms=tuple(out_transforms))


# ---------------------------------------------------------------------------
# on-disk dataset layout
# ---------------------------------------------------------------------------


def save_ring_dataset(dataset: RingDataset, directory, model: PointCloud | None = None) -> Path:
    """Write view_NN.ply / view_NN.gt files (and optionally model.ply)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if model is not None:
        write_ply(model, directory / "model.ply")
    for i, (view, transform) in enumerate(zip(dataset.views, dataset.transforms)):
        write_ply(view, directory / f"view_{i:02d}.ply")
        write_transform(directory / f"view_{i:02d}.gt", transform)
    return directory


def load_ring_dataset(directory) -> RingDataset:
    """Load a dataset directory written by :func:`save_ring_dataset`.

    View files must be contiguous from view_00; each needs a matching .gt
    transform.  Missing files are reported by name.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileFormatError(f"{directory}: not a directory")
    found = sorted(
        int(m.group(1)) for f in directory.iterdir() if (m := _VIEW_RE.match(f.name))
    )
    if not found:
        raise FileFormatError(f"{directory}: contains no view_NN.ply files")
    expected = list(range(len(found)))
    missing = [f"view_{i:02d}.ply" for i in set(expected) - set(found)]
    missing += [
        f"view_{i:02d}.gt" for i in expected if not (directory / f"view_{i:02d}.gt").exists()
    ]
    if missing:
        raise FileFormatError(f"{directory}: missing dataset files: {', '.join(sorted(missing))}")
    views = []
    transforms = []
    for i in expected:
        views.append(read_ply(directory / f"view_{i:02d}.ply"))
        transforms.append(read_transform(directory / f"view_{i:02d}.gt"))
    return RingDataset(model_id=directory.name, views=tuple(views), transforms=tuple(transforms))
