"""Correspondence construction and reliability scoring."""

from __future__ import annotations

import numpy as np
import pytest

import oracles
from conftest import make_keypoint, random_rotation
from tripletreg import (
    Correspondence,
    CorrespondenceSet,
    EmptySetError,
    InvalidInputError,
    build_correspondences,
    score_reliability,
)


def _descriptor(rng) -> np.ndarray:
    d = np.abs(rng.normal(size=33))
    return d / d.sum() * 300.0


def _keypoint_set(rng, count: int, offset: float = 0.0):
    kps = []
    for i in range(count):
        kps.append(
            make_keypoint(
                i,
                rng.normal(size=3) + offset,
                normal=(0.0, 0.0, 1.0),
                curvature=float(rng.uniform(0.0, 1.0 / 3.0)),
                descriptor=_descriptor(rng),
            )
        )
    return kps


class TestBuildCorrespondences:
    def test_identical_sets_match_each_point_to_itself(self, rng_factory):
        rng = rng_factory("corr-identity")
        src = _keypoint_set(rng, 40)
        dst = [
            make_keypoint(kp.index, kp.position, kp.normal, kp.curvature, kp.descriptor)
            for kp in src
        ]
        cset = build_correspondences(src, dst, k=1, curvature_threshold=1.0, resolution=1.0)
        assert len(cset) == 40
        for c in cset:
            assert c.src.index == c.dst.index
            assert c.reliability is None

    def test_curvature_gate_rejects_large_differences(self, rng_factory):
        rng = rng_factory("corr-gate")
        d = _descriptor(rng)
        src = [make_keypoint(0, np.zeros(3), curvature=0.30, descriptor=d)]
        dst = [make_keypoint(0, np.ones(3), curvature=0.10, descriptor=d.copy())]
        with pytest.raises(EmptySetError):
            build_correspondences(src, dst, k=1, curvature_threshold=0.05, resolution=1.0)
        # The gate is strict: an exact-threshold difference also fails.
        # 0.25 and 0.125 are exact binary fractions, so the difference is too.
        src_edge = [make_keypoint(0, np.zeros(3), curvature=0.25, descriptor=d)]
        dst_edge = [make_keypoint(0, np.ones(3), curvature=0.125, descriptor=d.copy())]
        with pytest.raises(EmptySetError):
            build_correspondences(
                src_edge, dst_edge, k=1, curvature_threshold=0.125, resolution=1.0
            )
        kept = build_correspondences(
            src_edge, dst_edge, k=1, curvature_threshold=0.126, resolution=1.0
        )
        assert len(kept) == 1

    def test_neighbor_count_bounds_matches_per_source(self, rng_factory):
        rng = rng_factory("corr-count")
        src = _keypoint_set(rng, 25)
        dst = _keypoint_set(rng, 30)
        cset = build_correspondences(src, dst, k=3, curvature_threshold=1.0, resolution=1.0)
        per_src: dict[int, int] = {}
        for c in cset:
            per_src[c.src.index] = per_src.get(c.src.index, 0) + 1
        assert max(per_src.values()) <= 3
        assert len(cset) <= 25 * 3

    def test_neighbors_are_closest_descriptors(self, rng_factory):
        rng = rng_factory("corr-nearest")
        src = _keypoint_set(rng, 10)
        dst = _keypoint_set(rng, 40)
        cset = build_correspondences(src, dst, k=2, curvature_threshold=1.0, resolution=1.0)
        dst_desc = np.stack([kp.descriptor for kp in dst])
        by_src: dict[int, list[Correspondence]] = {}
        for c in cset:
            by_src.setdefault(c.src.index, []).append(c)
        for kp in src:
            dists = np.linalg.norm(dst_desc - kp.descriptor, axis=1)
            expect = set(np.argsort(dists, kind="stable")[:2])
            got = {c.dst.index for c in by_src[kp.index]}
            assert got == expect

    def test_output_is_source_major(self, rng_factory):
        rng = rng_factory("corr-order")
        src = _keypoint_set(rng, 15)
        dst = _keypoint_set(rng, 20)
        cset = build_correspondences(src, dst, k=4, curvature_threshold=1.0, resolution=1.0)
        src_order = [c.src.index for c in cset]
        assert src_order == sorted(src_order)

    def test_extra_predicate_filters_pairs(self, rng_factory):
        rng = rng_factory("corr-pred")
        src = _keypoint_set(rng, 12)
        dst = _keypoint_set(rng, 12)
        cset = build_correspondences(
            src,
            dst,
            k=2,
            curvature_threshold=1.0,
            resolution=1.0,
            extra_predicate=lambda a, b: b.index % 2 == 0,
        )
        assert all(c.dst.index % 2 == 0 for c in cset)

    def test_empty_inputs_rejected(self, rng_factory):
        rng = rng_factory("corr-empty")
        src = _keypoint_set(rng, 5)
        with pytest.raises(InvalidInputError):
            build_correspondences([], src, k=1, curvature_threshold=0.05, resolution=1.0)
        with pytest.raises(InvalidInputError):
            build_correspondences(src, [], k=1, curvature_threshold=0.05, resolution=1.0)

    def test_requires_descriptors(self, rng_factory):
        rng = rng_factory("corr-nodesc")
        bare = [make_keypoint(0, np.zeros(3), curvature=0.1)]
        other = _keypoint_set(rng, 3)
        with pytest.raises(InvalidInputError):
            build_correspondences(bare, other, k=1, curvature_threshold=1.0, resolution=1.0)


def _set_from_positions(
    src_pos: np.ndarray, dst_pos: np.ndarray, resolution: float = 1.0
) -> CorrespondenceSet:
    items = tuple(
        Correspondence(src=make_keypoint(i, p), dst=make_keypoint(i, q))
        for i, (p, q) in enumerate(zip(src_pos, dst_pos))
    )
    return CorrespondenceSet(items=items, resolution=resolution)


class TestScoreReliability:
    def test_single_pair_scores_exactly_one(self):
        cset = _set_from_positions(np.zeros((1, 3)), np.ones((1, 3)))
        out = score_reliability(cset, range_factor=10.0, divisions=1)
        assert out.items[0].reliability == 1.0

    def test_two_consistent_pairs_score_two(self):
        # A pure translation preserves every pairwise distance, so each pair
        # earns the self vote plus a full vote from the other.
        src = np.array([[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]])
        dst = src + np.array([5.0, -2.0, 1.0])
        out = score_reliability(_set_from_positions(src, dst), range_factor=10.0, divisions=1)
        for c in out:
            assert c.reliability == pytest.approx(2.0, abs=1e-12)

    def test_matches_subset_oracle(self, rng_factory):
        rng = rng_factory("reliability-oracle")
        n = 200
        src = rng.normal(size=(n, 3)) * 4.0
        dst = rng.normal(size=(n, 3)) * 4.0
        resolution = 0.05
        out = score_reliability(
            _set_from_positions(src, dst, resolution), range_factor=10.0, divisions=4
        )
        want = oracles.reliability_scores(src, dst, h=10.0 * resolution, divisions=4)
        got = np.empty(n)
        for c in out:
            got[c.src.index] = c.reliability
        assert got == pytest.approx(want, rel=1e-9)

    def test_sorted_descending_with_stable_ties(self, rng_factory):
        rng = rng_factory("reliability-sort")
        src = rng.normal(size=(80, 3))
        dst = rng.normal(size=(80, 3))
        out = score_reliability(
            _set_from_positions(src, dst, 0.1), range_factor=10.0, divisions=4
        )
        values = [c.reliability for c in out]
        assert values == sorted(values, reverse=True)
        for a, b in zip(out.items, out.items[1:]):
            if a.reliability == b.reliability:
                # Input order was ascending src index, and ties keep it.
                assert a.src.index < b.src.index

    def test_preserves_the_pair_multiset(self, rng_factory):
        rng = rng_factory("reliability-multiset")
        src = rng.normal(size=(50, 3))
        dst = rng.normal(size=(50, 3))
        out = score_reliability(
            _set_from_positions(src, dst, 0.1), range_factor=10.0, divisions=4
        )
        assert sorted(c.src.index for c in out) == list(range(50))
        assert sorted(c.dst.index for c in out) == list(range(50))
        assert out.resolution == 0.1

    def test_rigid_motion_of_both_clouds_preserves_scores(self, rng_factory):
        rng = rng_factory("reliability-rigid")
        src = rng.normal(size=(60, 3))
        dst = rng.normal(size=(60, 3))
        base = score_reliability(
            _set_from_positions(src, dst, 0.1), range_factor=10.0, divisions=4
        )
        rot_a, rot_b = random_rotation(rng), random_rotation(rng)
        ta, tb = rng.normal(size=3), rng.normal(size=3)
        moved = score_reliability(
            _set_from_positions(src @ rot_a.T + ta, dst @ rot_b.T + tb, 0.1),
            range_factor=10.0,
            divisions=4,
        )
        got = {c.src.index: c.reliability for c in moved}
        for c in base:
            assert got[c.src.index] == pytest.approx(c.reliability, rel=1e-9)

    def test_planted_inliers_outscore_outliers(self, rng_factory):
        rng = rng_factory("reliability-planted")
        n = 120
        inlier_count = 40  # ~33% inliers
        src = rng.uniform(-2.0, 2.0, size=(n, 3))
        rot = random_rotation(rng)
        shift = np.array([1.0, -0.5, 2.0])
        dst = src @ rot.T + shift
        # Corrupt the tail: random destinations break distance consistency.
        dst[inlier_count:] = rng.uniform(-2.0, 2.0, size=(n - inlier_count, 3))
        out = score_reliability(
            _set_from_positions(src, dst, 0.02), range_factor=10.0, divisions=4
        )
        by_index = {c.src.index: c.reliability for c in out}
        inlier_mean = np.mean([by_index[i] for i in range(inlier_count)])
        outlier_mean = np.mean([by_index[i] for i in range(inlier_count, n)])
        assert inlier_mean > outlier_mean * 2.0

    def test_divisions_clamped_to_pair_count(self, rng_factory):
        rng = rng_factory("reliability-clamp")
        src = rng.normal(size=(3, 3))
        dst = rng.normal(size=(3, 3))
        out = score_reliability(
            _set_from_positions(src, dst, 1.0), range_factor=1.0, divisions=8
        )
        want = oracles.reliability_scores(src, dst, h=1.0, divisions=3)
        got = np.empty(3)
        for c in out:
            got[c.src.index] = c.reliability
        assert got == pytest.approx(want, rel=1e-12)

    def test_parameter_validation(self, rng_factory):
        rng = rng_factory("reliability-valid")
        cset = _set_from_positions(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
        with pytest.raises(InvalidInputError):
            score_reliability(cset, range_factor=0.0, divisions=4)
        with pytest.raises(InvalidInputError):
            score_reliability(cset, range_factor=-1.0, divisions=4)
        with pytest.raises(InvalidInputError):
            score_reliability(cset, range_factor=10.0, divisions=0)
        with pytest.raises(InvalidInputError):
            CorrespondenceSet(items=(), resolution=0.0)
