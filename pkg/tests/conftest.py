"""Shared synthetic-geometry builders for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from tripletreg import Keypoint, PointCloud

# ---------------------------------------------------------------------------
# basic clouds
# ---------------------------------------------------------------------------


def planar_grid(side: int = 10, spacing: float = 1.0) -> np.ndarray:
    """Regular side x side grid on z = 0."""
    axis = np.arange(side) * spacing
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    return np.c_[gx.ravel(), gy.ravel(), np.zeros(side * side)]


def sphere_points(count: int, rng: np.random.Generator, radius: float = 1.0) -> np.ndarray:
    """Uniform sampling of a sphere surface centered at the origin."""
    direction = rng.normal(size=(count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return radius * direction


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random rotation matrix (external implementation)."""
    return Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()


def rot_y(degrees: float) -> np.ndarray:
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def make_keypoint(index: int, position, normal=(0.0, 0.0, 1.0), curvature: float = 0.1,
                  descriptor=None) -> Keypoint:
    """Keypoint stub for stages that only need position/normal/curvature."""
    return Keypoint(
        index=index,
        position=np.asarray(position, dtype=np.float64),
        normal=np.asarray(normal, dtype=np.float64),
        curvature=curvature,
        descriptor=descriptor,
    )


# ---------------------------------------------------------------------------
# benchmark models (surface samplings with analytic normals)
# ---------------------------------------------------------------------------


def sphere_union_model(total: int, rng: np.random.Generator) -> PointCloud:
    """Union of four unequal spheres, sampled on the outer surface.

    Normals are analytic (radial from the owning sphere's center).  The
    arrangement is asymmetric so no rigid self-symmetry survives.
    """
    centers = np.array(
        [
            [0.0, 0.0, 0.0],
            [0.85, 0.25, 0.1],
            [0.3, 0.75, -0.35],
            [-0.25, 0.4, 0.7],
        ]
    )
    radii = np.array([1.0, 0.72, 0.58, 0.5])
    weights = radii**2 / (radii**2).sum()
    pts, nrm = [], []
    kept = 0
    while kept < total:
        batch = max(1024, total - kept)
        which = rng.choice(len(radii), size=batch, p=weights)
        direction = rng.normal(size=(batch, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        p = centers[which] + radii[which, None] * direction
        # A sample survives if it is outside every sphere it does not lie on.
        outside = np.ones(batch, dtype=bool)
        for s in range(len(radii)):
            d = np.linalg.norm(p - centers[s], axis=1)
            outside &= (which == s) | (d >= radii[s])
        p, direction = p[outside], direction[outside]
        pts.append(p)
        nrm.append(direction)
        kept += len(p)
    points = np.vstack(pts)[:total]
    normals = np.vstack(nrm)[:total]
    return PointCloud(points=points, normals=normals)


def _cube_frames() -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(tangent u, tangent v, outward normal) for each cube face."""
    ex, ey, ez = np.eye(3)
    return [
        (ey, ez, ex), (ey, ez, -ex),
        (ex, ez, ey), (ex, ez, -ey),
        (ex, ey, ez), (ex, ey, -ez),
    ]


def bumpy_cube_model(total: int, rng: np.random.Generator) -> PointCloud:
    """Cube of half-width 1 with a few smooth bumps per face.

    Bumps are Gaussian height fields along the outward face normal, with
    analytic normals from the height gradient; layouts differ per face so the
    model has no rigid self-symmetry.
    """
    frames = _cube_frames()
    bumps = []
    for _ in frames:
        count = rng.integers(2, 5)
        bumps.append(
            [
                (
                    rng.uniform(-0.5, 0.5, size=2),  # center (u, v)
                    rng.uniform(0.08, 0.16),  # amplitude
                    rng.uniform(0.12, 0.2),  # sigma
                )
                for _ in range(count)
            ]
        )
    per_face = np.full(len(frames), total // len(frames))
    per_face[: total % len(frames)] += 1
    pts, nrm = [], []
    for face, (eu, ev, en) in enumerate(frames):
        n = int(per_face[face])
        uv = rng.uniform(-1.0, 1.0, size=(n, 2))
        height = np.zeros(n)
        grad = np.zeros((n, 2))
        for center, amp, sigma in bumps[face]:
            rel = uv - center
            g = amp * np.exp(-np.einsum("ij,ij->i", rel, rel) / (2.0 * sigma**2))
            height += g
            grad += -rel / sigma**2 * g[:, None]
        p = uv[:, :1] * eu + uv[:, 1:] * ev + (1.0 + height)[:, None] * en
        normal = en - grad[:, :1] * eu - grad[:, 1:] * ev
        normal /= np.linalg.norm(normal, axis=1, keepdims=True)
        pts.append(p)
        nrm.append(normal)
    return PointCloud(points=np.vstack(pts), normals=np.vstack(nrm))


@pytest.fixture(scope="session")
def rng_factory():
    """Independent deterministic generators, one per requested label."""

    def make(label: str) -> np.random.Generator:
        seed = int.from_bytes(label.encode(), "little") % (2**63)
        return np.random.default_rng(seed)

    return make
