"""End-to-end registration behavior and configuration plumbing."""

from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import bumpy_cube_model, rot_y, sphere_union_model
from tripletreg import (
    InvalidInputError,
    PointCloud,
    RegistrationConfig,
    RegistrationError,
    apply_transform,
    cloud_resolution,
    estimate_normals,
    register,
)

# Small-but-structured test config: plenty for a few thousand points while
# keeping every pipeline test under a couple of seconds.
_FAST = RegistrationConfig(
    keypoint_count=400,
    min_triplets=20_000,
    scan_fraction=1.0,
)


@pytest.fixture(scope="module")
def sphere_cloud(rng_factory):
    rng = rng_factory("pipeline-sphere-model")
    return sphere_union_model(4000, rng)


@pytest.fixture(scope="module")
def cube_cloud(rng_factory):
    rng = rng_factory("pipeline-cube-model")
    return bumpy_cube_model(4000, rng)


def _rotation_angle_degrees(rotation: np.ndarray) -> float:
    c = (np.trace(rotation) - 1.0) / 2.0
    return math.degrees(math.acos(np.clip(c, -1.0, 1.0)))


class TestRegister:
    def test_self_registration_is_identity(self, sphere_cloud):
        result = register(sphere_cloud, sphere_cloud, _FAST)
        res = result.diagnostics.resolution
        assert _rotation_angle_degrees(result.transform.rotation) < 0.1
        assert np.linalg.norm(result.transform.translation) < 1e-3 * res * 1e3

    def test_recovers_planted_rigid_motion(self, cube_cloud):
        rot = rot_y(20.0)
        shift = np.array([0.25, -0.1, 0.4])
        moving = PointCloud(points=(cube_cloud.points - shift) @ rot)
        result = register(cube_cloud, moving, _FAST)
        angle_err = _rotation_angle_degrees(result.transform.rotation.T @ rot)
        assert angle_err < 3.0
        moved = result.transform.transform_points(moving.points)
        rms = math.sqrt(float(np.mean(np.sum((moved - cube_cloud.points) ** 2, axis=1))))
        assert rms < 2.0 * result.diagnostics.resolution

    def test_deterministic_across_runs(self, sphere_cloud):
        rot = rot_y(12.0)
        moving = PointCloud(points=sphere_cloud.points @ rot)
        first = register(sphere_cloud, moving, _FAST)
        second = register(sphere_cloud, moving, _FAST)
        assert first.transform.matrix().tobytes() == second.transform.matrix().tobytes()
        d1, d2 = first.diagnostics, second.diagnostics
        assert d1.correspondence_count == d2.correspondence_count
        assert d1.triplet_count == d2.triplet_count
        assert d1.vote_count == d2.vote_count
        assert d1.degenerate_triplet_count == d2.degenerate_triplet_count

    def test_diagnostics_are_consistent(self, sphere_cloud):
        result = register(sphere_cloud, sphere_cloud, _FAST)
        d = result.diagnostics
        assert d.correspondence_count <= _FAST.keypoint_count * _FAST.knn_k
        assert d.vote_count + d.degenerate_triplet_count == d.triplet_count
        assert 0.0 < d.consensus_ratio <= 1.0
        assert d.resolution > 0.0
        for name in (
            "normals",
            "resolution",
            "curvature",
            "keypoints",
            "descriptors",
            "correspondences",
            "reliability",
            "triplets",
            "votes",
            "pose",
        ):
            assert name in d.stage_seconds
            assert d.stage_seconds[name] >= 0.0

    def test_votes_kept_only_on_request(self, sphere_cloud):
        without = register(sphere_cloud, sphere_cloud, _FAST)
        assert without.votes is None
        with_votes = register(sphere_cloud, sphere_cloud, _FAST, keep_votes=True)
        assert with_votes.votes is not None
        rotations, translations = with_votes.votes
        assert len(rotations) == with_votes.diagnostics.vote_count
        assert len(translations) == with_votes.diagnostics.vote_count

    def test_keypoint_count_larger_than_cloud_rejected(self, rng_factory):
        rng = rng_factory("pipeline-too-few")
        tiny = PointCloud(points=rng.normal(size=(50, 3)))
        with pytest.raises(InvalidInputError):
            register(tiny, tiny, RegistrationConfig(keypoint_count=51))

    def test_stage_failures_carry_the_stage_name(self, rng_factory):
        rng = rng_factory("pipeline-stagefail")
        # Clouds with wildly different scales kill the distance-ratio gate,
        # so the triplet stage is the one that gives up.
        base = sphere_union_model(2000, rng)
        far = PointCloud(points=base.points * 40.0)
        config = RegistrationConfig(keypoint_count=300)
        with pytest.raises(RegistrationError) as err:
            register(base, far, config)
        assert str(err.value).split(":")[0] in {
            "correspondences",
            "triplets",
            "votes",
            "pose",
        }

    def test_accepts_precomputed_normals(self, sphere_cloud):
        ready = estimate_normals(sphere_cloud, 20)
        result = register(ready, ready, _FAST)
        assert _rotation_angle_degrees(result.transform.rotation) < 0.1


class TestRegistrationConfig:
    def test_defaults_are_the_documented_operating_point(self):
        c = RegistrationConfig()
        assert c.keypoint_count == 1500
        assert c.fpfh_radius_factor == 10.0
        assert c.knn_k == 15
        assert c.curvature_threshold == 0.05
        assert c.reliability_range == 10.0
        assert c.divisions == 4
        assert c.ppf_thresholds == (0.95, 3.0, 5.0)
        assert c.triangle_threshold == 20.0
        assert c.min_triplets == 150_000
        assert c.scan_fraction == 0.6
        assert c.mode_delta == 1
        assert c.normal_k == 20

    def test_updated_parses_strings(self):
        c = RegistrationConfig().updated(
            {
                "keypoint_count": "800",
                "scan_fraction": "0.8",
                "ppf_thresholds": "0.9, 4.0, 6.0",
            }
        )
        assert c.keypoint_count == 800
        assert c.scan_fraction == 0.8
        assert c.ppf_thresholds == (0.9, 4.0, 6.0)
        spaced = RegistrationConfig().updated({"ppf_thresholds": "0.9 4 6"})
        assert spaced.ppf_thresholds == (0.9, 4.0, 6.0)

    def test_updated_rejects_unknown_keys_and_bad_values(self):
        with pytest.raises(InvalidInputError):
            RegistrationConfig().updated({"keypoint_cout": "800"})
        with pytest.raises(InvalidInputError):
            RegistrationConfig().updated({"keypoint_count": "eight hundred"})
        with pytest.raises(InvalidInputError):
            RegistrationConfig().updated({"ppf_thresholds": "0.9 4"})

    def test_validation_guards_every_field(self):
        bad = [
            {"keypoint_count": 0},
            {"fpfh_radius_factor": 0.0},
            {"knn_k": 0},
            {"curvature_threshold": 0.0},
            {"reliability_range": -1.0},
            {"divisions": 0},
            {"ppf_thresholds": (0.0, 3.0, 5.0)},
            {"ppf_thresholds": (0.95, 3.0, 180.0)},
            {"triangle_threshold": 0.0},
            {"min_triplets": 0},
            {"scan_fraction": 0.0},
            {"scan_fraction": 1.5},
            {"mode_delta": -1},
            {"normal_k": 2},
        ]
        for overrides in bad:
            with pytest.raises(InvalidInputError):
                RegistrationConfig(**overrides)

    def test_from_file_round_trip(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text(
            "# tuned for small scans\n"
            "keypoint_count = 600\n"
            "triangle_threshold = 15.0  # degrees\n"
            "\n"
            "ppf_thresholds = 0.92, 3.5, 5.5\n",
            encoding="utf-8",
        )
        c = RegistrationConfig.from_file(path)
        assert c.keypoint_count == 600
        assert c.triangle_threshold == 15.0
        assert c.ppf_thresholds == (0.92, 3.5, 5.5)

    def test_from_file_reports_line_numbers(self, tmp_path):
        path = tmp_path / "broken.conf"
        path.write_text("keypoint_count = 600\nnot a setting\n", encoding="utf-8")
        with pytest.raises(InvalidInputError) as err:
            RegistrationConfig.from_file(path)
        assert ":2:" in str(err.value)

    def test_triplet_config_converts_degrees(self):
        tc = RegistrationConfig().triplet_config()
        assert tc.ppf_thresholds[0] == 0.95
        assert tc.ppf_thresholds[1] == pytest.approx(math.radians(3.0))
        assert tc.ppf_thresholds[2] == pytest.approx(math.radians(5.0))
        assert tc.triangle_threshold == pytest.approx(math.radians(20.0))


class TestPipelineGeometryHelpers:
    def test_apply_transform_round_trip(self, sphere_cloud, rng_factory):
        rng = rng_factory("pipeline-apply")
        cloud = estimate_normals(sphere_cloud, 12)
        rot = rot_y(33.0)
        shift = rng.normal(size=3)
        from tripletreg import RigidTransform

        t = RigidTransform(rot, shift)
        moved = apply_transform(t, cloud)
        back = apply_transform(t.inverse(), moved)
        assert np.abs(back.points - cloud.points).max() < 1e-9
        assert np.abs(back.normals - cloud.normals).max() < 1e-9

    def test_resolution_matches_merged_median_spacing(self, sphere_cloud, cube_cloud):
        res = cloud_resolution(sphere_cloud, cube_cloud)
        assert res > 0.0
