"""Geometrically consistent correspondence triplets via incremental graph search."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .correspond import Correspondence, CorrespondenceSet
from .errors import DegenerateInputError, EmptySetError, InvalidInputError
from .features import PpfDescriptor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TripletSearchConfig:
    """Gates and budget for the triplet search.

    ppf_thresholds: (distance ratio in (0, 1], angle tolerance, normal-angle
    tolerance); angles in radians.  triangle_threshold (radians) is the
    minimum angle a candidate triangle must exceed.  The search stops early
    once `min_triplets` have been found or a `scan_fraction` share of the
    correspondence list has served as the leading node.
    """

    ppf_thresholds: tuple[float, float, float]
    triangle_threshold: float
    min_triplets: int = 150_000
    scan_fraction: float = 0.6

    def __post_init__(self) -> None:
        ratio, angle_tol, normal_tol = self.ppf_thresholds
        if not 0.0 < ratio <= 1.0:
            raise InvalidInputError(f"distance ratio threshold must be in (0, 1], got {ratio}")
        for name, val in (("angle", angle_tol), ("normal-angle", normal_tol),
                          ("triangle", self.triangle_threshold)):
            if not 0.0 < val < math.pi:
                raise InvalidInputError(f"{name} threshold must be in (0, pi), got {val}")
        if self.min_triplets < 1:
            raise InvalidInputError(f"min_triplets must be >= 1, got {self.min_triplets}")
        if not 0.0 < self.scan_fraction <= 1.0:
            raise InvalidInputError(f"scan_fraction must be in (0, 1], got {self.scan_fraction}")


@dataclass(frozen=True, eq=False)
class Triplet:
    """Three correspondences, stored with their positions in the sorted set.

    `indices` is (i, j, k) with i > j > k, referring to the reliability-sorted
    correspondence list the triplet came from.
    """

    a: Correspondence
    b: Correspondence
    c: Correspondence
    indices: tuple[int, int, int]


def ppf_similar(f: PpfDescriptor, g: PpfDescriptor, thresholds) -> bool:
    """Whether two point-pair features agree within the given tolerances.

    Distances compare as a ratio bounded away from 0 and infinity; the three
    angles compare by absolute difference.  All comparisons are strict.
    """
    ratio_lo, angle_tol, normal_tol = thresholds
    if g.distance == 0.0:
        raise DegenerateInputError("cannot compare against a zero-distance pair feature")
    ratio = f.distance / g.distance
    return (
        ratio_lo < ratio < 1.0 / ratio_lo
        and abs(f.n1_angle - g.n1_angle) < angle_tol
        and abs(f.n2_angle - g.n2_angle) < angle_tol
        and abs(f.normal_angle - g.normal_angle) < normal_tol
    )


def triangle_ok(pa, pb, pc, angle_threshold: float) -> bool:
    """Whether the triangle's smallest angle exceeds `angle_threshold` (radians).

    With squared edge lengths a2 <= b2 <= c2 the test passes when
    ``b2 + c2 - a2 < 2 * sqrt(b2 * c2) * cos(angle_threshold)``, which by the
    law of cosines means the angle opposite the shortest edge (the smallest
    angle) is larger than the threshold.  Any coincident pair fails.
    """
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    pc = np.asarray(pc, dtype=np.float64)
    e = np.sort([
        float(np.dot(pb - pa, pb - pa)),
        float(np.dot(pc - pa, pc - pa)),
        float(np.dot(pc - pb, pc - pb)),
    ])
    a2, b2, c2 = e
    if a2 <= 0.0:
        return False
    return b2 + c2 - a2 < 2.0 * math.sqrt(b2 * c2) * math.cos(angle_threshold)


# ---------------------------------------------------------------------------
# vectorized gate internals
# ---------------------------------------------------------------------------


def _ppf_rows(p_ref, n_ref, pts, nrms):
    """Pair-feature components of one reference point against many others.

    Returns (distance, angle(n_ref, d), angle(n_other, d), angle(n_ref,
    n_other)); rows with zero distance carry distance 0 and must be masked.
    """
    d = pts - p_ref
    dist = np.linalg.norm(d, axis=1)
    safe = np.where(dist > 0.0, dist, 1.0)
    dn = d / safe[:, None]
    a1 = np.arccos(np.clip(dn @ n_ref, -1.0, 1.0))
    a2 = np.arccos(np.clip(np.einsum("ij,ij->i", nrms, dn), -1.0, 1.0))
    a3 = np.arccos(np.clip(nrms @ n_ref, -1.0, 1.0))
    return dist, a1, a2, a3


def _similar_mask(i, src_pos, src_nrm, dst_pos, dst_nrm, thresholds) -> np.ndarray:
    """Edge gate of node i against all earlier nodes (vectorized ppf_similar)."""
    ratio_lo, angle_tol, normal_tol = thresholds
    f1, f2, f3, f4 = _ppf_rows(src_pos[i], src_nrm[i], src_pos[:i], src_nrm[:i])
    g1, g2, g3, g4 = _ppf_rows(dst_pos[i], dst_nrm[i], dst_pos[:i], dst_nrm[:i])
    ok = (f1 > 0.0) & (g1 > 0.0)
    safe_g1 = np.where(ok, g1, 1.0)
    ratio = f1 / safe_g1
    ok &= (ratio > ratio_lo) & (ratio < 1.0 / ratio_lo)
    ok &= np.abs(f2 - g2) < angle_tol
    ok &= np.abs(f3 - g3) < angle_tol
    ok &= np.abs(f4 - g4) < normal_tol
    return ok


def _triangle_mask(pa, pb, pcs, cos_threshold: float) -> np.ndarray:
    """Vectorized triangle_ok for fixed (pa, pb) against many third corners."""
    e_ab = float(np.dot(pb - pa, pb - pa))
    d_ac = pcs - pa
    d_bc = pcs - pb
    e_ac = np.einsum("ij,ij->i", d_ac, d_ac)
    e_bc = np.einsum("ij,ij->i", d_bc, d_bc)
    edges = np.sort(np.stack([np.full_like(e_ac, e_ab), e_ac, e_bc]), axis=0)
    a2, b2, c2 = edges[0], edges[1], edges[2]
    return (a2 > 0.0) & (b2 + c2 - a2 < 2.0 * np.sqrt(b2 * c2) * cos_threshold)


def generate_triplets(cset: CorrespondenceSet, config: TripletSearchConfig) -> list[Triplet]:
    """Enumerate gate-passing correspondence triplets from a sorted set.

    Nodes are visited in list order (most reliable first).  Node i gains a
    directed edge to each earlier node j whose point-pair features agree on
    both clouds; every two-hop path i -> j -> k whose closing pair (i, k) also
    agrees, and whose triangles on both clouds are well conditioned, becomes a
    triplet.  Eq/ordering conventions: output is deterministic, grouped by
    ascending i with j and k each descending.

    The scan ends at the first node boundary where `min_triplets` is reached,
    or once the leading-node count hits ``scan_fraction * len(cset)``.
    Raises EmptySetError when the scan finishes with no triplet (a set with
    fewer than 3 items returns empty with a warning instead).
    """
    n = len(cset)
    if n < 3:
        log.warning("correspondence set of size %d cannot form triplets", n)
        return []
    src_pos, dst_pos = cset.positions()
    src_nrm = np.array([c.src.normal for c in cset.items])
    dst_nrm = np.array([c.dst.normal for c in cset.items])
    cos_tri = math.cos(config.triangle_threshold)
    node_budget = config.scan_fraction * n

    edges: list[np.ndarray] = [np.empty(0, dtype=np.intp)]
    found: list[tuple[int, int, int]] = []
    for i in range(1, n):
        row = _similar_mask(i, src_pos, src_nrm, dst_pos, dst_nrm, config.ppf_thresholds)
        my_edges = np.nonzero(row)[0][::-1]
        edges.append(my_edges)
        for j in my_edges:
            candidates = edges[j]
            if candidates.size == 0:
                continue
            closing = candidates[row[candidates]]
            if closing.size == 0:
                continue
            good = (
                _triangle_mask(src_pos[i], src_pos[j], src_pos[closing], cos_tri)
                & _triangle_mask(dst_pos[i], dst_pos[j], dst_pos[closing], cos_tri)
            )
            for k in closing[good]:
                found.append((i, int(j), int(k)))
        if len(found) >= config.min_triplets:
            break
        if i + 1 >= node_budget:
            break
    if not found:
        raise EmptySetError(
            f"no geometrically consistent triplet among {n} correspondences"
        )
    return [
        Triplet(a=cset.items[i], b=cset.items[j], c=cset.items[k], indices=(i, j, k))
        for i, j, k in found
    ]
